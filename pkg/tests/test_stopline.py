import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import measures
from fragim.corpus import BINARY, DISSIPATIVE, MIXTURE
from fragim.fragcore import SimulationParams, grow_forest, simulate
from fragim.functions import TestFunction, parse_test_function
from fragim.measure import malthusian, rho_pairing
from fragim.stopline import (
    IncompleteStoppingLine,
    empirical_mean,
    expected_empirical_mean,
    forest_empirical,
    lambda_martingale,
    simulate_stopped,
    stop_at,
)
from fragim import rng

seeds = st.integers(0, 2**63 - 1)
etas = st.sampled_from([0.5, 0.1, 0.03, 0.01])
ONE, ZERO = TestFunction.constant(1.0), TestFunction.constant(0.0)


def _path(nu, seed, eta):
    return simulate(nu, SimulationParams(size_floor=eta, seed=seed))


def test_eta_one_gives_first_generation():
    path = _path(MIXTURE, 1, 1.0 - 1e-12)
    sc = stop_at(path, 1.0)
    first = path.nu.ratios[path.atom[0]]
    assert sorted(sc.size.tolist()) == sorted(first)


def test_binary_eta_point_three():
    sc = stop_at(_path(BINARY, 8, 0.3), 0.3)
    assert len(sc) == 4
    assert np.all(sc.size == 0.25)


def test_conservative_lambda_is_one():
    sc = stop_at(_path(MIXTURE, 2, 0.01), 0.01)
    assert lambda_martingale(sc, 0.0) == pytest.approx(1.0, abs=1e-13)
    assert math.fsum(sc.size) == pytest.approx(1.0, abs=1e-13)


def test_empirical_mean_trivial_functions():
    sc = stop_at(_path(DISSIPATIVE, 2, 0.05), 0.05)
    ps = malthusian(DISSIPATIVE)
    assert empirical_mean(sc, ONE, ps) == lambda_martingale(sc, ps)
    assert empirical_mean(sc, ZERO, ps) == 0.0


def test_eta_below_floor_rejected():
    with pytest.raises(ValueError):
        stop_at(_path(BINARY, 0, 0.1), 0.01)


def test_short_horizon_raises_then_retry_succeeds():
    path = simulate(BINARY, SimulationParams(horizon=0.01, size_floor=1e-3, seed=4))
    with pytest.raises(IncompleteStoppingLine):
        stop_at(path, 1e-3)
    longer, sc = simulate_stopped(BINARY, SimulationParams(horizon=0.01, size_floor=1e-3, seed=4), 1e-3)
    assert longer.params.horizon > 0.01
    assert math.fsum(sc.size) == pytest.approx(1.0)
    # the retry extends the short run: shared blocks are identical
    n = path.n_blocks
    assert np.array_equal(longer.size[:n], path.size)


def test_lambda_mean_dissipative_mc():
    ps = malthusian(DISSIPATIVE)
    forest = grow_forest(DISSIPATIVE, rng.path_seed(0, np.arange(10_000)), floors=0.01)
    lam = forest_empirical(forest, 0.01, [], ps)[None]
    assert abs(lam.mean() - 1.0) <= 3 * lam.std(ddof=1) / math.sqrt(len(lam)) + 1e-12


def test_exact_mean_one_atom_eta_one():
    # for a single atom, eta = 1 stops every child: E Lambda = sum r^(1+p*) = 1
    ps = malthusian(DISSIPATIVE)
    assert expected_empirical_mean(DISSIPATIVE, ONE, 1.0, ps) == pytest.approx(1.0, abs=1e-12)


def test_exact_oracle_matches_mc_mixture():
    f = TestFunction.indicator(0.4, 0.8)
    exact = expected_empirical_mean(MIXTURE, f, 0.01, 0.0)
    forest = grow_forest(MIXTURE, rng.path_seed(1, np.arange(4000)), floors=0.01)
    v = forest_empirical(forest, 0.01, [f], 0.0)[f]
    assert abs(v.mean() - exact) <= 3 * v.std(ddof=1) / math.sqrt(len(v))


def test_exact_oracle_binary_lattice():
    # binary: stopped sizes are 2^-k with eta/2 <= size < eta
    f = TestFunction.indicator(0.4, 0.8)
    for eta in (0.3, 0.1, 0.01):
        k = math.floor(-math.log2(eta)) + 1
        x = 2.0**-k / eta
        assert expected_empirical_mean(BINARY, f, eta, 0.0) == float(0.4 <= x < 0.8)


def test_convergence_to_rho_for_binary_average():
    # along the lattice the stopped ratio cycles; its log-average is <rho, f>
    f = TestFunction.indicator(0.4, 0.8)
    n = 2000
    vals = [expected_empirical_mean(BINARY, f, 2.0 ** (-i / n), 0.0) for i in range(1, n + 1)]
    assert sum(vals) / n == pytest.approx(rho_pairing(BINARY, f, 0.0), abs=2e-3)


# --- properties ------------------------------------------------------------


@given(measures(), seeds, etas)
def test_first_passage(nu, seed, eta):
    sc = stop_at(_path(nu, seed, eta), eta)
    assert np.all(sc.size < eta)
    assert np.all(sc.parent_size >= eta)


@given(measures(), seeds, st.sampled_from([(0.5, 0.1), (0.1, 0.02), (0.3, 0.01)]))
def test_nesting(nu, seed, pair):
    eta, eta2 = pair
    path = _path(nu, seed, eta2)
    hi = set(stop_at(path, eta).block.tolist())
    lo = stop_at(path, eta2).block
    for b in lo:
        anc, hits = int(b), 0
        while anc >= 0:
            hits += anc in hi
            anc = int(path.parent[anc])
        assert hits == 1


@given(measures(), seeds, etas)
def test_additivity_and_bound(nu, seed, eta):
    ps = malthusian(nu)
    sc = stop_at(_path(nu, seed, eta), eta)
    f, g = parse_test_function("ind:0.2,0.7"), parse_test_function("pow:2")
    lhs = empirical_mean(sc, f + g, ps)
    assert lhs == pytest.approx(empirical_mean(sc, f, ps) + empirical_mean(sc, g, ps), rel=1e-13)
    assert empirical_mean(sc, f, ps) <= f.bound * lambda_martingale(sc, ps) * (1 + 1e-13)


@given(measures(), seeds, etas)
def test_forest_matches_single_path(nu, seed, eta):
    ps = malthusian(nu)
    f = TestFunction.indicator(0.4, 0.8)
    forest = grow_forest(nu, [seed], floors=eta)
    sc = stop_at(forest.record(0), eta)
    got = forest_empirical(forest, eta, [f], ps)
    assert got[f][0] == pytest.approx(empirical_mean(sc, f, ps), rel=1e-13)
    assert got[None][0] == pytest.approx(lambda_martingale(sc, ps), rel=1e-13)
