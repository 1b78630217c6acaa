"""Finite discrete dislocation measures and their structural analytics.

A measure is a finite list of atoms (weight, ranked ratio vector).  From it
we get the Laplace exponent ``phi``, its derivative, the Malthusian
parameter p*, the exponent p-bar solving (1+p) phi'(p) = phi(p), and the
limit measure rho paired with a test function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .functions import TestFunction
from .quadrature import piecewise_simpson

DEFAULT_TOL = 1e-12
CONSERVATIVE_TOL = 1e-12


class HypothesisError(ValueError):
    """The measure violates a structural hypothesis (no Malthusian root, ...)."""


class RankedMassVector(tuple):
    """Non-increasing tuple of positive masses."""

    def __new__(cls, masses: Sequence[float] = (), *, unit: bool = False):
        vals = tuple(float(m) for m in masses)
        if any(not math.isfinite(m) or m <= 0 for m in vals):
            raise ValueError(f"masses must be finite and positive: {vals}")
        if any(a < b for a, b in zip(vals, vals[1:])):
            raise ValueError(f"masses must be non-increasing: {vals}")
        if unit and math.fsum(vals) > 1.0 + 1e-12:
            raise ValueError(f"ratios must sum to at most 1: {vals}")
        return super().__new__(cls, vals)

    @classmethod
    def ranked(cls, masses, **kw) -> "RankedMassVector":
        return cls(sorted((m for m in masses if m > 0), reverse=True), **kw)

    @property
    def total(self) -> float:
        return math.fsum(self)


@dataclass(frozen=True)
class DislocationMeasure:
    """Finite measure on ranked ratio sequences, given as weighted atoms."""

    weights: tuple
    ratios: tuple  # tuple of RankedMassVector

    def __post_init__(self):
        if len(self.weights) == 0:
            raise ValueError("dislocation measure needs at least one atom")
        if len(self.weights) != len(self.ratios):
            raise ValueError("weights and ratios differ in length")
        for w, r in zip(self.weights, self.ratios):
            if not (math.isfinite(w) and w > 0):
                raise ValueError(f"atom weight must be positive, got {w}")
            if len(r) == 0:
                raise ValueError("an atom needs at least one positive ratio")
            if len(r) == 1 and r[0] == 1.0:
                raise ValueError("atom (1, 0, ...) carries no dislocation")

    @classmethod
    def from_atoms(cls, atoms) -> "DislocationMeasure":
        """Build from ``[(weight, ratios), ...]`` or ``[{"weight":..., "ratios":[...]}, ...]``."""
        ws, rs = [], []
        for atom in atoms:
            if isinstance(atom, dict):
                w, r = atom["weight"], atom["ratios"]
            else:
                w, r = atom
            ws.append(float(w))
            rs.append(RankedMassVector.ranked(r, unit=True))
        return cls(tuple(ws), tuple(rs))

    def scaled(self, c: float) -> "DislocationMeasure":
        return DislocationMeasure(tuple(c * w for w in self.weights), self.ratios)

    @property
    def total_rate(self) -> float:
        return math.fsum(self.weights)

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    @property
    def conservative(self) -> bool:
        return all(abs(r.total - 1.0) <= CONSERVATIVE_TOL for r in self.ratios)

    @property
    def max_children(self) -> int:
        return max(len(r) for r in self.ratios)

    def ratio_matrix(self) -> np.ndarray:
        """Atoms as rows, zero-padded to ``max_children`` columns."""
        out = np.zeros((self.n_atoms, self.max_children))
        for i, r in enumerate(self.ratios):
            out[i, : len(r)] = r
        return out

    def to_atoms(self) -> list:
        return [{"weight": w, "ratios": list(r)} for w, r in zip(self.weights, self.ratios)]


@dataclass(frozen=True)
class StructuralConstants:
    p_lower: float
    p_star: float
    p_bar: float
    phi_prime_at_star: float
    phi_prime_at_bar: float
    conservative: bool


def _check_p(p: float) -> None:
    if not p > -1.0:
        raise ValueError(f"phi is only defined for p > -1, got {p}")


def phi(nu: DislocationMeasure, p: float) -> float:
    """Laplace exponent: sum over atoms of weight * (1 - sum_n r_n**(1+p))."""
    _check_p(p)
    return math.fsum(
        w * (1.0 - math.fsum(x ** (1.0 + p) for x in r)) for w, r in zip(nu.weights, nu.ratios)
    )


def phi_prime(nu: DislocationMeasure, p: float) -> float:
    _check_p(p)
    return math.fsum(
        w * math.fsum(x ** (1.0 + p) * -math.log(x) for x in r)
        for w, r in zip(nu.weights, nu.ratios)
    )


def _bisect(g, lo: float, hi: float, tol: float) -> float:
    """Bisect a sign change of g on [lo, hi] down to adjacent floats."""
    glo = g(lo)
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid
        gm = g(mid)
        if gm == 0.0:
            return mid
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid


def malthusian(nu: DislocationMeasure, tol: float = DEFAULT_TOL) -> float:
    """p*: zero for conservative measures, else the root of phi on (-1, 0)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if nu.conservative:
        return 0.0
    lo = None
    for k in range(1, 16):
        cand = -1.0 + 10.0 ** (-k)
        if phi(nu, cand) < 0:
            lo = cand
            break
    if lo is None:
        raise HypothesisError(
            "phi has no sign change on (-1, 0): no Malthusian parameter "
            f"(phi(-1+1e-15) = {phi(nu, -1.0 + 1e-15):.3g})"
        )
    root = _bisect(lambda p: phi(nu, p), lo, 0.0, tol)
    if abs(phi(nu, root)) >= tol:
        raise HypothesisError(f"bisection residual {phi(nu, root):.3g} exceeds tol {tol:g}")
    return root


def _pbar_residual(nu, p):
    return (1.0 + p) * phi_prime(nu, p) - phi(nu, p)


def pbar(nu: DislocationMeasure, tol: float = DEFAULT_TOL) -> float:
    """Root of (1+p) phi'(p) = phi(p); the residual is decreasing in p."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo = malthusian(nu, tol)
    hi = 1.0
    while _pbar_residual(nu, hi) > 0:
        if hi >= 64.0:
            raise HypothesisError("no root of (1+p)phi'(p) = phi(p) below p = 64")
        hi *= 2.0
    root = _bisect(lambda p: _pbar_residual(nu, p), lo, hi, tol)
    if abs(_pbar_residual(nu, root)) >= tol:
        raise HypothesisError(f"p-bar residual {_pbar_residual(nu, root):.3g} exceeds tol {tol:g}")
    if not root > lo:
        raise HypothesisError("p-bar does not exceed p*")
    return root


def structural_constants(nu: DislocationMeasure, tol: float = DEFAULT_TOL) -> StructuralConstants:
    ps = malthusian(nu, tol)
    pb = pbar(nu, tol)
    return StructuralConstants(
        p_lower=-1.0,
        p_star=ps,
        p_bar=pb,
        phi_prime_at_star=phi_prime(nu, ps),
        phi_prime_at_bar=phi_prime(nu, pb),
        conservative=nu.conservative,
    )


def _tail_weight(nu: DislocationMeasure, p: float):
    """(sorted ratio values, cumulative sum of weight * r**(1+p) over ratios < t)."""
    vals, mass = [], []
    for w, r in zip(nu.weights, nu.ratios):
        for x in r:
            vals.append(x)
            mass.append(w * x ** (1.0 + p))
    order = np.argsort(vals, kind="stable")
    return np.asarray(vals)[order], np.cumsum(np.asarray(mass)[order])


def rho_pairing(
    nu: DislocationMeasure, f: TestFunction, p_star: float, quad_tol: float = 1e-9
) -> float:
    """<rho, f> = (1/phi'(p*)) int_0^1 f(t) G(t) dt/t with G(t) = sum w r^(1+p*) 1{r < t}.

    G is a step function jumping at atom ratios; between jumps it is constant,
    so each piece reduces to G_i * int f(t)/t dt, done by adaptive Simpson.
    """
    if quad_tol <= 0:
        raise ValueError("quad_tol must be positive")
    if not isinstance(f, TestFunction) or not math.isfinite(f.bound):
        raise ValueError("f must be a bounded TestFunction")
    dphi = phi_prime(nu, p_star)
    if not dphi > 0:
        raise ValueError("phi'(p*) must be positive")
    vals, cum = _tail_weight(nu, p_star)
    edges = sorted(set(v for v in vals if v < 1.0)) + [1.0]
    pieces = []
    n = len(edges) - 1
    for lo, hi in zip(edges[:-1], edges[1:]):
        # G on (lo, hi): total weight of ratios <= lo
        k = np.searchsorted(vals, lo, side="right")
        g = cum[k - 1] if k > 0 else 0.0
        if g == 0.0:
            continue
        integral = piecewise_simpson(
            lambda t: float(f(t)) / t, lo, hi, f.breakpoints, quad_tol * dphi / (n * g)
        )
        pieces.append(g * integral)
    return math.fsum(pieces) / dphi
