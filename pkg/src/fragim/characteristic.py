"""Processes counted with random characteristics.

A characteristic scores a dislocation event from x = eta / parent_size, the
ratio vector of the split and an independent noise uniform.  Z^phi_eta sums
the score over every event whose parent is at least eta (so x <= 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng
from .fragcore import Forest, PathRecord, grow_forest
from .functions import TestFunction, parse_test_function
from .measure import DislocationMeasure, malthusian, phi_prime
from .quadrature import QuadratureError, piecewise_simpson
from .stats import MCParams, Moments
from .stopline import IncompleteStoppingLine

# fn(x[m], ratios[m, k] zero-padded, noise[m]) -> values[m]
Kernel = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Characteristic:
    """phi(x, s, noise); forced to 0 for x > 1 and for the trivial split (1)."""

    fn: Kernel
    name: str = "phi"
    random: bool = False
    # u-values in (0, 1] where phi(., s) may jump, for quadrature
    breaks: Callable[[np.ndarray], Sequence[float]] = field(default=lambda s: ())

    def batch(self, x, ratios, noise) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ratios = np.atleast_2d(np.asarray(ratios, dtype=float))
        out = np.asarray(self.fn(x, ratios, np.asarray(noise, dtype=float)), dtype=float)
        trivial = (ratios[:, 0] == 1.0) & (ratios[:, 1:] == 0).all(axis=1)
        return np.where((x > 1.0) | (x <= 0.0) | trivial, 0.0, out)

    def evaluate(self, x: float, ratios, noise_seed: int) -> float:
        """Scalar form; noise is the NOISE stream of ``noise_seed``'s root key."""
        noise = rng.uniform(rng.root_key(np.uint64(noise_seed)), rng.NOISE)
        r = np.asarray(ratios, dtype=float)[None, :]
        return float(self.batch(np.array([x]), r, np.atleast_1d(noise))[0])

    def __add__(self, other: "Characteristic") -> "Characteristic":
        a, b = self, other
        return Characteristic(
            fn=lambda x, s, n: a.batch(x, s, n) + b.batch(x, s, n),
            name=f"{a.name}+{b.name}",
            random=a.random or b.random,
            breaks=lambda s: (*a.breaks(s), *b.breaks(s)),
        )


ZERO = Characteristic(lambda x, s, n: np.zeros_like(x), name="zero")
COUNT = Characteristic(lambda x, s, n: np.ones_like(x), name="count")


def empirical_adapter(f: TestFunction, p_star: float) -> Characteristic:
    """phi(x, s) = sum_n 1{s_n < x <= 1} (s_n/x)^(1+p*) f(s_n/x)."""

    def fn(x, s, noise):
        y = s / x[:, None]
        live = (s > 0) & (s < x[:, None])
        y = np.where(live, y, 0.0)
        val = np.where(live, y ** (1.0 + p_star) * np.asarray(f(y)), 0.0)
        return val.sum(axis=1)

    def breaks(s):
        out = []
        for sn in s[s > 0]:
            out.append(sn)
            out.extend(sn / c for c in f.breakpoints if c > 0 and sn / c <= 1.0)
        return out

    return Characteristic(fn, name=f"adapter:{f.name}", breaks=breaks)


# --- psi registry for the energy model ---------------------------------------

PSI = {
    "one": lambda s: np.ones(len(s)),
    "zero": lambda s: np.zeros(len(s)),
    "dissipated": lambda s: 1.0 - s.sum(axis=1),  # mass lost in the split
    "gini": lambda s: 1.0 - (s**2).sum(axis=1),
}


@dataclass(frozen=True, eq=False)
class EnergySpec:
    p: float
    psi: Callable[[np.ndarray], np.ndarray]
    psi_name: str = "psi"

    def __post_init__(self):
        if not self.p >= -1.0:
            raise ValueError("energy exponent p must be at least -1")


def energy_characteristic(spec: EnergySpec) -> Characteristic:
    """phi(x, s) = x^-(1+p) psi(s), so eta^(1+p) Z_eta equals the energy."""
    e = 1.0 + spec.p
    return Characteristic(
        lambda x, s, n: x ** (-e) * spec.psi(s), name=f"energy:{spec.p:g},{spec.psi_name}"
    )


def parse_characteristic(spec: str, p_star: float) -> Characteristic:
    """Registry: ``zero``, ``count``, ``adapter:<f>``, ``energy:<p>,<psi>``."""
    spec = spec.strip()
    if spec == "zero":
        return ZERO
    if spec == "count":
        return COUNT
    kind, _, arg = spec.partition(":")
    if kind == "adapter":
        return empirical_adapter(parse_test_function(arg), p_star)
    if kind == "energy":
        p, _, psi = arg.partition(",")
        psi = psi.strip() or "one"
        if psi not in PSI:
            raise ValueError(f"unknown psi {psi!r}; known: {sorted(PSI)}")
        return energy_characteristic(EnergySpec(float(p), PSI[psi], psi))
    raise ValueError(f"unknown characteristic {spec!r}")


# --- evaluation on paths ------------------------------------------------------


def _events_above(rel, split, eta):
    bad = np.flatnonzero((rel >= eta) & ~split)
    if len(bad):
        raise IncompleteStoppingLine(eta, bad)
    return np.flatnonzero(split & (rel >= eta))


def count_with_characteristic(
    path: PathRecord, phi: Characteristic, eta: float, initial_mass: float | None = None
) -> float:
    """Z^phi_eta: sum of phi(eta/parent, ratios, noise) over events with parent >= eta.

    Parent sizes are taken relative to ``initial_mass`` (default: the path's).
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    m = path.initial_mass if initial_mass is None else initial_mass
    rel = path.size / m
    ev = _events_above(rel, path.split, eta)
    if len(ev) == 0:
        return 0.0
    ratios = path.nu.ratio_matrix()[path.atom[ev]]
    noise = rng.uniform(path.key[ev], rng.NOISE) if phi.random else np.zeros(len(ev))
    return math.fsum(phi.batch(eta / rel[ev], ratios, noise))


def forest_count(forest: Forest, phi: Characteristic, eta: float) -> np.ndarray:
    """Per-path Z^phi_eta over a forest."""
    rel = forest.rel_size
    ev = _events_above(rel, forest.atom >= 0, eta)
    ratios = forest.nu.ratio_matrix()[forest.atom[ev]]
    noise = rng.uniform(forest.key[ev], rng.NOISE) if phi.random else np.zeros(len(ev))
    vals = phi.batch(eta / rel[ev], ratios, noise)
    return np.bincount(forest.path[ev], weights=vals, minlength=forest.n_paths)


def energy(path: PathRecord, spec: EnergySpec, eta: float, p_star: float | None = None) -> float:
    """sum over events with parent >= eta of parent^(1+p) psi(ratios)."""
    ps = malthusian(path.nu) if p_star is None else p_star
    if not spec.p < ps:
        raise ValueError(f"energy exponent p={spec.p} must be below p*={ps}")
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    rel = path.rel_size
    ev = _events_above(rel, path.split, eta)
    ratios = path.nu.ratio_matrix()[path.atom[ev]]
    return math.fsum(rel[ev] ** (1.0 + spec.p) * spec.psi(ratios))


# --- limit constant -----------------------------------------------------------


def _inner_integral(phi: Characteristic, s: np.ndarray, noise: float, p_star: float, tol: float) -> float:
    """int_0^1 u^p* phi(u, s) du, via w = u^(1+p*) to absorb the weight at 0.

    Integrated piece by piece between jump points of phi; inside a piece u is
    clamped to the open u-interval so rounding in w -> u never crosses a jump.
    """
    e = 1.0 + p_star
    row = s[None, :]
    cuts = sorted({b for b in phi.breaks(s) if 0.0 < b < 1.0})
    edges = [0.0, *cuts, 1.0]
    parts = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        u_lo, u_hi = math.nextafter(lo, 1.0), math.nextafter(hi, 0.0)

        def g(w, u_lo=u_lo, u_hi=u_hi):
            u = min(max(w ** (1.0 / e), u_lo), u_hi)
            with np.errstate(over="ignore", divide="ignore"):
                return float(phi.batch(np.array([u]), row, np.array([noise]))[0]) / e

        if lo == 0.0:
            parts.append(_toward_zero(g, hi**e, tol / len(edges)))
        else:
            parts.append(piecewise_simpson(g, lo**e, hi**e, (), tol / len(edges)))
    val = math.fsum(parts)
    if not math.isfinite(val):
        raise QuadratureError("inner integral diverged")
    return val


def _toward_zero(g, b: float, tol: float, max_pieces: int = 1000) -> float:
    """int_0^b g over dyadic pieces [b/2^(k+1), b/2^k], stopping on a geometric tail bound.

    Handles integrable power singularities at 0; a non-integrable one shows
    up as pieces that stop shrinking.
    """
    parts = []
    prev = None
    hi = b
    for k in range(max_pieces):
        lo = 0.5 * hi
        piece = piecewise_simpson(g, lo, hi, (), tol / 4.0)
        parts.append(piece)
        if prev is not None and prev != 0.0:
            r = abs(piece / prev)
            if r < 1.0 and abs(piece) * r / (1.0 - r) < tol / 4.0:
                return math.fsum(parts)
        if prev == 0.0 and piece == 0.0:
            return math.fsum(parts)
        if k >= 64 and abs(piece) >= abs(parts[k - 32]):
            break
        prev = piece
        hi = lo
    raise QuadratureError("u^p* phi(u, s) is not integrable at 0")


def _mass_integral(forest: Forest, p_star: float) -> np.ndarray:
    """Per path int_0^1 sum_k size_k(t)^(1+p*) dt, exact for piecewise-constant sizes."""
    lo = np.minimum(forest.birth, 1.0)
    hi = np.minimum(forest.death, 1.0)
    w = forest.rel_size ** (1.0 + p_star) * (hi - lo)
    return np.bincount(forest.path, weights=w, minlength=forest.n_paths)


def limit_constant_estimate(
    nu: DislocationMeasure,
    phi: Characteristic,
    p_star: float,
    mc: MCParams,
    quad_tol: float = 1e-9,
):
    """(1/phi'(p*)) int_0^1 E[sum_k size_k(t)^(1+p*)] dt * sum_a w_a int_0^1 u^p* phi(u, s_a) du.

    The time integral is averaged over ``mc.n_paths`` simulated paths; the
    u-integral is done by quadrature per atom (per path when phi is random).
    Returns ``(estimate, stderr)``.
    """
    if mc.n_paths < 100:
        raise ValueError("limit_constant_estimate needs at least 100 paths")
    dphi = phi_prime(nu, p_star)
    mat = nu.ratio_matrix()
    seeds = rng.path_seed(mc.base_seed, np.arange(mc.n_paths))
    forest = grow_forest(nu, seeds, horizons=1.0, floors=1e-12)
    if np.any(forest.frozen & (forest.birth <= 1.0)):
        raise IncompleteStoppingLine(1e-12, np.flatnonzero(forest.frozen))
    mass = _mass_integral(forest, p_star)
    if phi.random:
        noise = rng.uniform(rng.root_key(seeds), rng.NOISE)
        inner = np.array(
            [
                math.fsum(w * _inner_integral(phi, s, u, p_star, quad_tol) for w, s in zip(nu.weights, mat))
                for u in noise
            ]
        )
    else:
        inner = math.fsum(w * _inner_integral(phi, s, 0.0, p_star, quad_tol) for w, s in zip(nu.weights, mat))
    vals = mass * inner / dphi
    m = Moments.of(vals)
    return m.mean, m.stderr
