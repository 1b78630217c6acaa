import math

import pytest

from fragim.quadrature import QuadratureError, adaptive_simpson, piecewise_simpson


def test_polynomial_exact():
    assert adaptive_simpson(lambda x: x**3, 0.0, 2.0, 1e-12) == pytest.approx(4.0, abs=1e-12)


def test_log_integral():
    assert adaptive_simpson(lambda x: 1.0 / x, 0.5, 1.0, 1e-12) == pytest.approx(math.log(2), abs=1e-11)


def test_step_function_split_at_jump():
    f = lambda x: 1.0 if x >= 0.3 else 0.0
    assert piecewise_simpson(f, 0.0, 1.0, [0.3], 1e-12) == pytest.approx(0.7, abs=1e-12)


def test_divergent_integrand_raises():
    with pytest.raises(QuadratureError):
        piecewise_simpson(lambda x: 1.0 / x, 0.0, 1.0, [], 1e-10)


def test_bad_tolerance():
    with pytest.raises(ValueError):
        adaptive_simpson(lambda x: x, 0, 1, 0.0)
