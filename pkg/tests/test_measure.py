import math

import pytest
from hypothesis import assume, given, strategies as st

from conftest import CORPUS, measures
from fragim.corpus import BINARY, DISSIPATIVE, MIXTURE
from fragim.functions import TestFunction
from fragim.measure import (
    DislocationMeasure,
    RankedMassVector,
    malthusian,
    pbar,
    phi,
    phi_prime,
    rho_pairing,
    structural_constants,
)

LN2 = math.log(2)


def _bisect(g, lo, hi):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (g(lo) > 0) == (g(mid) > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- oracles ---------------------------------------------------------------


def test_phi_binary_values():
    assert phi(BINARY, 0.0) == 0.0
    assert phi(BINARY, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_phi_dissipative_at_zero():
    assert phi(DISSIPATIVE, 0.0) == pytest.approx(0.25, abs=1e-15)


def test_phi_prime_binary():
    assert phi_prime(BINARY, 0.0) == pytest.approx(LN2, rel=1e-14)
    assert phi_prime(BINARY, 1.0) == pytest.approx(LN2 / 2, rel=1e-14)


def test_phi_prime_vanishes_at_infinity():
    for nu in CORPUS:
        assert phi_prime(nu, 50.0) < phi_prime(nu, 1.0)


def test_malthusian_values():
    assert malthusian(BINARY) == 0.0
    closed = math.log2(2.0 / (math.sqrt(5.0) - 1.0)) - 1.0
    assert malthusian(DISSIPATIVE) == pytest.approx(closed, abs=1e-10)
    assert malthusian(DISSIPATIVE.scaled(2.0)) == pytest.approx(closed, abs=1e-10)


def test_pbar_binary_root_of_defining_equation():
    ref = _bisect(lambda p: (1 + p) * 2.0**-p * LN2 - (1 - 2.0**-p), 0.5, 3.0)
    pb = pbar(BINARY)
    assert pb == pytest.approx(ref, abs=1e-10)
    assert pb == pytest.approx(1.42, abs=5e-3)
    assert phi_prime(BINARY, pb) == pytest.approx(0.259, abs=5e-4)


def test_structural_constants_bundle():
    c = structural_constants(MIXTURE)
    assert c.p_star == 0.0
    assert c.phi_prime_at_bar == pytest.approx(phi_prime(MIXTURE, c.p_bar))


def test_rho_binary_constant_and_indicator():
    assert rho_pairing(BINARY, TestFunction.constant(1.0), 0.0) == pytest.approx(1.0, abs=1e-9)
    # G(t) = 1{t > 1/2}: <rho, 1[.4,.8)> = ln(1.6) / ln 2
    ind = TestFunction.indicator(0.4, 0.8)
    assert rho_pairing(BINARY, ind, 0.0) == pytest.approx(math.log(1.6) / LN2, abs=1e-9)


def test_rho_zero_function():
    assert rho_pairing(MIXTURE, TestFunction.constant(0.0), 0.0) == 0.0


def test_rho_mixture_normalised():
    assert rho_pairing(MIXTURE, TestFunction.constant(1.0), 0.0) == pytest.approx(1.0, abs=1e-8)


def test_rho_mixture_brute_force():
    # midpoint rule on a fine grid, with the step function written out by hand
    ind = lambda t: 1.0 if 0.4 <= t < 0.8 else 0.0

    def g(t):
        s = 0.0
        for w, rs in ((0.5, (0.5, 0.5)), (0.5, (2 / 3, 1 / 3))):
            s += w * sum(r for r in rs if r < t)
        return s

    n = 200_000
    h = 1.0 / n
    brute = sum(ind((i + 0.5) * h) * g((i + 0.5) * h) / ((i + 0.5) * h) for i in range(n)) * h
    brute /= phi_prime(MIXTURE, 0.0)
    assert rho_pairing(MIXTURE, TestFunction.indicator(0.4, 0.8), 0.0) == pytest.approx(brute, abs=1e-4)


# --- validation ------------------------------------------------------------


def test_invalid_measures_rejected():
    with pytest.raises(ValueError):
        DislocationMeasure.from_atoms([])
    with pytest.raises(ValueError):
        DislocationMeasure.from_atoms([(0.0, [0.5, 0.5])])
    with pytest.raises(ValueError):
        DislocationMeasure.from_atoms([(1.0, [0.7, 0.7])])
    with pytest.raises(ValueError):
        phi(BINARY, -1.0)


def test_ranked_mass_vector_sorted():
    v = RankedMassVector.ranked([0.1, 0.5, 0.0, 0.2])
    assert tuple(v) == (0.5, 0.2, 0.1)


# --- properties ------------------------------------------------------------


@given(measures(), st.floats(-0.9, 5.0), st.floats(0.01, 3.0), st.floats(0.01, 3.0))
def test_phi_concave(nu, p1, d1, d2):
    p2, p3 = p1 + d1, p1 + d1 + d2
    lam = d1 / (d1 + d2)
    interp = (1 - lam) * phi(nu, p1) + lam * phi(nu, p3)
    assert phi(nu, p2) >= interp - 1e-12


@pytest.mark.parametrize("p", [-0.5, 0.0, 1.0, 3.0])
@given(nu=measures())
def test_phi_prime_finite_difference(nu, p):
    h = 1e-5
    fd = (phi(nu, p + h) - phi(nu, p - h)) / (2 * h)
    assert phi_prime(nu, p) == pytest.approx(fd, rel=1e-6)


@given(measures())
def test_roots_and_ordering(nu):
    ps = malthusian(nu)
    assume(ps > -0.95)
    assert abs(phi(nu, ps)) < 1e-10
    pb = pbar(nu)
    assert abs((1 + pb) * phi_prime(nu, pb) - phi(nu, pb)) < 1e-10
    assert pb > ps


@given(measures(), st.floats(0.1, 10.0), st.floats(-0.5, 3.0))
def test_rate_scaling(nu, c, p):
    s = nu.scaled(c)
    assert phi(s, p) == pytest.approx(c * phi(nu, p), rel=1e-12)
    assert phi_prime(s, p) == pytest.approx(c * phi_prime(nu, p), rel=1e-12)
    assert malthusian(s) == pytest.approx(malthusian(nu), abs=1e-10)
    assert pbar(s) == pytest.approx(pbar(nu), abs=1e-9)


@given(measures(conservative=True))
def test_rho_constant_is_one_for_conservative(nu):
    assert rho_pairing(nu, TestFunction.constant(1.0), 0.0) == pytest.approx(1.0, abs=1e-9 + 1e-9)
