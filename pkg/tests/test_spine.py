import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from conftest import measures
from fragim.corpus import BINARY, DISSIPATIVE, MIXTURE
from fragim.measure import HypothesisError
from fragim.spine import (
    reconstruct,
    sample_spine_atoms,
    simulate_spine,
    spine_immigration_measure,
    spine_rate,
    spine_sizes_at,
    tilted_moment_check,
)
from fragim.stats import MCParams

seeds = st.integers(0, 2**63 - 1)


def test_binary_p0_halves():
    sp = simulate_spine(BINARY, 0.0, 10.0, 3)
    assert spine_rate(BINARY, 0.0) == 1.0
    assert sp.spine_sizes == tuple(2.0 ** -(n + 1) for n in range(len(sp.spine_sizes)))


def test_binary_p1_rate():
    assert spine_rate(BINARY, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_binary_p0_child_uniform():
    # with p = 0 the sibling of a binary split always has the spine's size
    sp = simulate_spine(BINARY, 0.0, 20.0, 1)
    assert all(sib[0] == s for sib, s in zip(sp.sibling_configs, sp.spine_sizes))


def test_immigration_measure_weights():
    assert spine_immigration_measure(BINARY, 0.0).weights == BINARY.weights
    assert spine_immigration_measure(BINARY, 1.0).weights[0] == pytest.approx(0.5)
    mix = spine_immigration_measure(MIXTURE, 1.0)
    assert mix.weights[0] == pytest.approx(0.5 * 0.5)
    assert mix.weights[1] == pytest.approx(0.5 * (4 / 9 + 1 / 9))
    assert mix.ratios == MIXTURE.ratios


def test_dissipative_rejected():
    with pytest.raises(HypothesisError):
        simulate_spine(DISSIPATIVE, 0.5, 1.0, 0)


def test_reconstruction_before_first_jump():
    sp = simulate_spine(MIXTURE, 0.5, 5.0, 2)
    r = reconstruct(MIXTURE, 0.5, 5.0, 2, t=sp.jump_times[0] / 2)
    assert r.immigrant_totals == ()
    assert tuple(r.full) == (1.0,)


def test_q_zero_moment_is_one():
    m, se, a = tilted_moment_check(BINARY, 0.5, 0.0, 2.0, MCParams(100))
    assert (m, se, a) == (1.0, 0.0, 1.0)


def test_binary_tilted_target():
    m, se, a = tilted_moment_check(BINARY, 0.0, 1.0, 2.0, MCParams(10_000, 4))
    assert a == pytest.approx(math.exp(-1.0), rel=1e-14)
    assert abs(m - a) <= 3 * se


@pytest.mark.parametrize("p,q,t", [(0.0, 1.0, 2.0), (0.5, 0.5, 2.0), (1.0, -0.3, 1.0)])
def test_tilted_moment_identity(p, q, t):
    m, se, a = tilted_moment_check(MIXTURE, p, q, t, MCParams(10_000, 7))
    assert abs(m - a) <= 3 * se


def test_sibling_law_chi_square():
    atoms = sample_spine_atoms(MIXTURE, 0.5, 100_000, 5)
    w = np.array(spine_immigration_measure(MIXTURE, 0.5).weights)
    counts = np.bincount(atoms, minlength=len(w))
    assert chisquare(counts, w / w.sum() * counts.sum()).pvalue > 0.01


def test_vectorised_sizes_match_paths():
    seeds_ = np.arange(20, dtype=np.uint64)
    vec = spine_sizes_at(MIXTURE, 0.5, 3.0, seeds_)
    for s, v in zip(seeds_, vec):
        assert simulate_spine(MIXTURE, 0.5, 3.0, int(s)).size_at(3.0) == v


# --- properties ------------------------------------------------------------


@given(measures(conservative=True), st.floats(-0.5, 2.0), seeds)
def test_spine_strictly_decreasing_and_conserving(nu, p, seed):
    sp = simulate_spine(nu, p, 5.0, seed)
    sizes = (1.0, *sp.spine_sizes)
    assert all(b < a for a, b in zip(sizes, sizes[1:]))
    for before, after, sib in zip(sizes, sizes[1:], sp.sibling_configs):
        assert after + math.fsum(sib) == pytest.approx(before, rel=1e-14)


@given(measures(conservative=True), seeds, st.lists(st.floats(0.0, 3.0), min_size=10, max_size=10))
def test_reconstruction_identity(nu, seed, ts):
    for t in ts:
        r = reconstruct(nu, 0.5, 3.0, seed, t=t, size_floor=1e-6)
        assert r.residual <= 1e-12
        assert math.fsum(r.full) == pytest.approx(1.0, abs=1e-12)
