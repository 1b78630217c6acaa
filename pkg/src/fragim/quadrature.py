"""Adaptive Simpson quadrature on piecewise-smooth integrands."""

from __future__ import annotations

import math
from typing import Callable, Iterable


class QuadratureError(ArithmeticError):
    """Raised when adaptive refinement fails to reach the requested tolerance."""


def _simpson(f, a, fa, b, fb):
    m = 0.5 * (a + b)
    fm = f(m)
    return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def adaptive_simpson(
    f: Callable[[float], float], a: float, b: float, tol: float, max_depth: int = 50
) -> float:
    if tol <= 0:
        raise ValueError("quadrature tolerance must be positive")
    if b == a:
        return 0.0
    fa, fb = f(a), f(b)
    m, fm, whole = _simpson(f, a, fa, b, fb)
    # explicit stack: (a, fa, b, fb, m, fm, whole, tol, depth)
    stack = [(a, fa, b, fb, m, fm, whole, tol, 0)]
    parts = []
    while stack:
        a, fa, b, fb, m, fm, whole, eps, depth = stack.pop()
        lm, flm, left = _simpson(f, a, fa, m, fm)
        rm, frm, right = _simpson(f, m, fm, b, fb)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps:
            parts.append(left + right + delta / 15.0)
            continue
        if depth >= max_depth or not math.isfinite(delta):
            raise QuadratureError(
                f"no convergence on [{a:.6g}, {b:.6g}] after {depth} bisections"
            )
        stack.append((a, fa, m, fm, lm, flm, left, 0.5 * eps, depth + 1))
        stack.append((m, fm, b, fb, rm, frm, right, 0.5 * eps, depth + 1))
    return math.fsum(parts)


def piecewise_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    breakpoints: Iterable[float],
    tol: float,
    max_depth: int = 50,
) -> float:
    """Integrate ``f`` over [a, b], splitting at every breakpoint inside (a, b).

    ``f`` is only evaluated in the interior of each piece nudged by one ulp at
    the ends, so one-sided limits are used at jump points.
    """
    cuts = sorted({x for x in breakpoints if a < x < b})
    edges = [a, *cuts, b]
    n = len(edges) - 1
    total = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        lo_in, hi_in = math.nextafter(lo, hi), math.nextafter(hi, lo)
        total.append(adaptive_simpson(f, lo_in, hi_in, tol / n, max_depth))
    return math.fsum(total)
