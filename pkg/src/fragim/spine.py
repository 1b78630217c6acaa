"""Spine decomposition under the tilted law P^(p).

Under P^(p) the tagged block |Pi_1(t)| jumps at rate sum_a w_a sum_n s_an^(1+p);
the pair (atom a, child n) is chosen with probability proportional to
w_a s_an^(1+p), the spine keeps child n and the other children immigrate as
independent ordinary fragmentations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .fragcore import grow_forest
from .measure import DislocationMeasure, HypothesisError, RankedMassVector, phi
from .stats import MCParams, Moments


@dataclass(frozen=True)
class SpinePath:
    nu: DislocationMeasure
    p: float
    horizon: float
    seed: int
    jump_times: tuple
    spine_sizes: tuple  # after each jump
    sibling_configs: tuple  # RankedMassVector per jump, absolute sizes
    atoms: tuple  # atom index per jump

    @property
    def xi(self) -> tuple:
        """-ln of the spine size after each jump."""
        return tuple(-math.log(s) for s in self.spine_sizes)

    def size_at(self, t: float) -> float:
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return 1.0 if k == 0 else self.spine_sizes[k - 1]


def _pairs(nu: DislocationMeasure, p: float):
    """Flattened (atom, child) pairs with tilted weights w_a s_an^(1+p)."""
    atom, child, w = [], [], []
    for a, (wa, r) in enumerate(zip(nu.weights, nu.ratios)):
        for n, x in enumerate(r):
            atom.append(a)
            child.append(n)
            w.append(wa * x ** (1.0 + p))
    return np.array(atom), np.array(child), np.array(w)


def _check(nu: DislocationMeasure, p: float) -> None:
    if not nu.conservative:
        raise HypothesisError(
            "spine decomposition is only implemented for conservative measures "
            "(ratios summing to 1); got a dissipative measure"
        )
    if not p > -1.0:
        raise ValueError("tilt parameter p must exceed -1")


def spine_rate(nu: DislocationMeasure, p: float) -> float:
    return math.fsum(_pairs(nu, p)[2])


def simulate_spine(nu: DislocationMeasure, p: float, horizon: float, seed: int) -> SpinePath:
    _check(nu, p)
    atom, child, w = _pairs(nu, p)
    cum = np.cumsum(w)
    rate = float(cum[-1])
    key = rng.root_key(np.uint64(seed))
    times, sizes, sibs, atoms = [], [], [], []
    t, s, i = 0.0, 1.0, 0
    while True:
        t += float(rng.exponential(key, rng.SPINE_CLOCK, i)) / rate
        if t > horizon:
            break
        k = min(int(np.searchsorted(cum, float(rng.uniform(key, rng.SPINE_PICK, i)) * rate, side="right")), len(cum) - 1)
        r = nu.ratios[atom[k]]
        n = child[k]
        sibs.append(RankedMassVector([s * x for m, x in enumerate(r) if m != n]))
        s = s * r[n]
        times.append(t)
        sizes.append(s)
        atoms.append(int(atom[k]))
        i += 1
    return SpinePath(nu, p, horizon, seed, tuple(times), tuple(sizes), tuple(sibs), tuple(atoms))


def spine_sizes_at(nu: DislocationMeasure, p: float, t: float, seeds) -> np.ndarray:
    """Spine sizes at time t for many seeds at once (same draws as simulate_spine)."""
    _check(nu, p)
    atom, child, w = _pairs(nu, p)
    cum = np.cumsum(w)
    rate = float(cum[-1])
    ratio = nu.ratio_matrix()[atom, child]
    key = rng.root_key(np.asarray(seeds, dtype=np.uint64))
    n = len(key)
    clock = np.zeros(n)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    i = 0
    while np.any(active):
        idx = np.flatnonzero(active)
        clock[idx] += rng.exponential(key[idx], rng.SPINE_CLOCK, i) / rate
        jump = clock[idx] <= t
        j = idx[jump]
        k = np.minimum(np.searchsorted(cum, rng.uniform(key[j], rng.SPINE_PICK, i) * rate, side="right"), len(cum) - 1)
        size[j] *= ratio[k]
        active[idx[~jump]] = False
        i += 1
    return size


def spine_immigration_measure(nu: DislocationMeasure, p: float) -> DislocationMeasure:
    """nu_I(ds) = sum_n s_n^(1+p) nu(ds): each atom reweighted."""
    if not p > -1.0:
        raise ValueError("p must exceed -1")
    return DislocationMeasure(
        tuple(w * math.fsum(x ** (1.0 + p) for x in r) for w, r in zip(nu.weights, nu.ratios)),
        nu.ratios,
    )


def sample_spine_atoms(nu: DislocationMeasure, p: float, n: int, seed: int) -> np.ndarray:
    """Atom index of n independent spine jumps (the law of the sibling configurations)."""
    atom, _, w = _pairs(nu, p)
    cum = np.cumsum(w)
    keys = rng.root_key(rng.path_seed(seed, np.arange(n)))
    k = np.minimum(np.searchsorted(cum, rng.uniform(keys, rng.SPINE_PICK) * cum[-1], side="right"), len(cum) - 1)
    return atom[k]


@dataclass(frozen=True)
class Reconstruction:
    t: float
    full: RankedMassVector
    spine: float
    immigrant_totals: tuple  # total mass at t of each sibling configuration

    @property
    def residual(self) -> float:
        """|sum(full) - spine - sum(immigrant totals)|."""
        return abs(math.fsum(self.full) - math.fsum([self.spine, *self.immigrant_totals]))


def reconstruct(nu: DislocationMeasure, p: float, horizon: float, seed: int, t: float | None = None, size_floor: float = 1e-12) -> Reconstruction:
    """Rebuild lambda(t) as the spine plus independently fragmenting siblings."""
    t = horizon if t is None else t
    if not 0.0 <= t <= horizon:
        raise ValueError("t must lie in [0, horizon]")
    sp = simulate_spine(nu, p, horizon, seed)
    k = int(np.searchsorted(sp.jump_times, t, side="right"))
    spine = sp.size_at(t)
    if k == 0:
        return Reconstruction(t, RankedMassVector([spine]), spine, ())
    base = rng.root_key(np.uint64(seed))
    masses, keys, horizons, group = [], [], [], []
    for i in range(k):
        for m, x in enumerate(sp.sibling_configs[i]):
            masses.append(x)
            keys.append(rng.child_key(rng.child_key(base, i), m))
            horizons.append(t - sp.jump_times[i])
            group.append(i)
    keys = np.array(keys, dtype=np.uint64)
    forest = grow_forest(nu, keys, masses=np.array(masses), horizons=np.array(horizons), floors=size_floor, keys=keys)
    tau = np.array(horizons)[forest.path]
    alive = (forest.birth <= tau) & (tau < forest.death)
    sizes = forest.size[alive]
    g = np.array(group)[forest.path[alive]]
    totals = tuple(math.fsum(sizes[g == i]) for i in range(k))
    full = RankedMassVector(sorted([spine, *sizes.tolist()], reverse=True))
    return Reconstruction(t, full, spine, totals)


def tilted_moment_check(nu: DislocationMeasure, p: float, q: float, t: float, mc: MCParams):
    """(MC mean of spine_size(t)^q, stderr, exp(-t (phi(p+q) - phi(p))))."""
    if not p + q > -1.0:
        raise ValueError("p + q must exceed -1")
    seeds = rng.path_seed(mc.base_seed, np.arange(mc.n_paths))
    m = Moments.of(spine_sizes_at(nu, p, t, seeds) ** q)
    return m.mean, (0.0 if mc.n_paths < 2 else m.stderr), math.exp(-t * (phi(nu, p + q) - phi(nu, p)))


def write_spine_csv(sp: SpinePath, fh) -> None:
    """Rows: time, spine_size, sibling_1..sibling_k (absolute sizes)."""
    k = max((len(s) for s in sp.sibling_configs), default=0)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["time", "spine_size", *[f"sibling_{i + 1}" for i in range(k)]])
    w.writerow([repr(0.0), repr(1.0), *[""] * k])
    for t, s, sib in zip(sp.jump_times, sp.spine_sizes, sp.sibling_configs):
        w.writerow([repr(t), repr(s), *map(repr, sib), *[""] * (k - len(sib))])
