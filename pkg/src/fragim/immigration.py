"""Fragmentation with Poissonian immigration.

Immigrating configurations arrive at the times of a Poisson process; every
block of every configuration (and of the initial configuration u) carries
its own independent unit-mass fragmentation, scaled by the block's mass v_j
and shifted by its arrival time t_j.  Composite quantities are sums of the
per-immigrant ones, so everything reduces to :mod:`fragcore` and
:mod:`stopline` on the individual paths.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import rng
from .characteristic import Characteristic, count_with_characteristic
from .fragcore import (
    FrozenBlockError,
    IncompletePathError,
    PathRecord,
    SimulationParams,
    grow_forest,
    simulate,
)
from .functions import TestFunction
from .measure import DislocationMeasure, RankedMassVector, malthusian, phi
from .stats import slope_regression
from .stopline import empirical_mean, forest_stop, stop_at

NuFamily = Union[DislocationMeasure, Callable[[int], DislocationMeasure]]


@dataclass(frozen=True)
class MarkLaw:
    """Finite law of immigrating configurations."""

    configs: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.configs) == 0 or len(self.configs) != len(self.probs):
            raise ValueError("mark law needs matching non-empty configs and probabilities")
        if any(p < 0 for p in self.probs) or not math.isclose(math.fsum(self.probs), 1.0, abs_tol=1e-12):
            raise ValueError("mark probabilities must be non-negative and sum to 1")

    @classmethod
    def fixed(cls, masses) -> "MarkLaw":
        return cls((RankedMassVector.ranked(masses),), (1.0,))

    @classmethod
    def from_atoms(cls, atoms) -> "MarkLaw":
        """``[{"weight": w, "masses": [...]}, ...]``; weights are normalised."""
        ws = [float(a["weight"]) for a in atoms]
        tot = math.fsum(ws)
        return cls(tuple(RankedMassVector.ranked(a["masses"]) for a in atoms), tuple(w / tot for w in ws))

    def sample(self, u: np.ndarray) -> np.ndarray:
        cum = np.cumsum(self.probs)
        return np.minimum(np.searchsorted(cum, u * cum[-1], side="right"), len(cum) - 1)

    def moment(self, p: float) -> float:
        """E[sum_n m_n^(1+p)]."""
        return math.fsum(q * math.fsum(m ** (1.0 + p) for m in c) for q, c in zip(self.probs, self.configs))


@dataclass(frozen=True)
class ImmigrationSchedule:
    initial_config: RankedMassVector = RankedMassVector((1.0,))
    rate: float = 0.0
    marks: MarkLaw = field(default_factory=lambda: MarkLaw.fixed([1.0]))
    theta: float = 0.0
    horizon: float = 0.0

    def __post_init__(self):
        if not self.rate >= 0 or not self.theta >= 0 or not self.horizon >= 0:
            raise ValueError("rate, theta and horizon must be non-negative")
        if self.rate > 0 and not math.isfinite(self.horizon):
            raise ValueError("immigration with positive rate needs a finite horizon")

    def expected_mass_sum(self, p: float, t: float = math.inf) -> float:
        """E[sum over immigrants arrived by t of v^(1+p)]."""
        base = math.fsum(x ** (1.0 + p) for x in self.initial_config)
        T = min(t, self.horizon)
        if self.rate == 0 or T <= 0:
            return base
        k = self.theta * (1.0 + p)
        integral = T if k == 0 else -math.expm1(-k * T) / k
        return base + self.rate * self.marks.moment(p) * integral


class ImmigrantRecord:
    """One immigrating block: index j, arrival time, mass and a lazily grown path."""

    __slots__ = ("j", "t_immigrate", "v", "seed", "nu", "_path")

    def __init__(self, j: int, t_immigrate: float, v: float, seed: int, nu: DislocationMeasure):
        if not v > 0:
            raise ValueError("immigrant mass must be positive")
        self.j = j
        self.t_immigrate = t_immigrate
        self.v = v
        self.seed = seed
        self.nu = nu
        self._path = None

    def __repr__(self):
        return f"ImmigrantRecord(j={self.j}, t={self.t_immigrate:.6g}, v={self.v:.6g})"

    def path(self, size_floor: float = 1e-9, horizon: float = math.inf) -> PathRecord:
        """Unit-mass path covering the requested floor and horizon (cached, extended on demand).

        Keyed random streams make a deeper run agree with a shallower one on
        every block they share.
        """
        c = self._path
        if c is not None and c.params.size_floor <= size_floor and c.params.horizon >= horizon:
            return c
        params = SimulationParams(horizon=horizon, size_floor=size_floor, seed=self.seed)
        self._path = simulate(self.nu, params)
        return self._path

    def attach(self, path: PathRecord) -> None:
        self._path = path


@dataclass(eq=False)
class CompositePath:
    schedule: ImmigrationSchedule
    immigrants: list
    seed: int = 0
    n_arrivals: int = 0

    def mass_sum(self, p: float) -> float:
        return math.fsum(im.v ** (1.0 + p) for im in self.immigrants)

    @property
    def mass_summability(self) -> float:
        """sum_j v_j^(1+p*) with p* of the first immigrant's measure."""
        ps = malthusian(self.immigrants[0].nu)
        s = self.mass_sum(ps)
        if not math.isfinite(s):
            raise ValueError("immigrant masses are not summable")
        return s


def _nu_for(nu: NuFamily, j: int) -> DislocationMeasure:
    return nu if isinstance(nu, DislocationMeasure) else nu(j)


def immigrant_seed(seed: int, j: int) -> int:
    return int(rng.child_key(rng.root_key(np.uint64(seed)), j))


def sample_immigration(schedule: ImmigrationSchedule, seed: int, nu: NuFamily) -> CompositePath:
    """Draw arrivals and marks; pair every block with a seeded fragmentation.

    Arrival count is Poisson(rate * horizon) with uniform times; marks are
    scaled by exp(-theta * arrival).  Index j runs over the initial blocks
    first, then arrivals in time order, blocks within a configuration in
    ranked order.
    """
    gen = np.random.Generator(np.random.Philox(key=int(rng.root_key(np.uint64(seed)))))
    n = int(gen.poisson(schedule.rate * schedule.horizon)) if schedule.rate > 0 else 0
    times = np.sort(gen.uniform(0.0, schedule.horizon, n)) if n else np.zeros(0)
    picks = schedule.marks.sample(gen.uniform(size=n)) if n else np.zeros(0, dtype=int)
    rows = [(0.0, float(x)) for x in schedule.initial_config]
    for t, k in zip(times, picks):
        scale = math.exp(-schedule.theta * t)
        rows.extend((float(t), float(m) * scale) for m in schedule.marks.configs[k])
    imms = [
        ImmigrantRecord(j, t, v, immigrant_seed(seed, j), _nu_for(nu, j)) for j, (t, v) in enumerate(rows)
    ]
    return CompositePath(schedule, imms, seed, n)


def sample_many(schedule: ImmigrationSchedule, nu: NuFamily, n: int, base_seed: int = 0) -> list:
    return [sample_immigration(schedule, int(s), nu) for s in rng.path_seed(base_seed, np.arange(n))]


# --- composite quantities -----------------------------------------------------


def _per_immigrant(value, cp: CompositePath) -> list:
    if isinstance(value, (list, tuple)):
        if len(value) != len(cp.immigrants):
            raise ValueError("per-immigrant family has the wrong length")
        return list(value)
    return [value] * len(cp.immigrants)


def _floor(e: float) -> float:
    # a relative eta of 1 (v_j == eta) still needs a floor inside (0, 1)
    return min(e, 0.5)


def immigrant_empirical(im: ImmigrantRecord, f: TestFunction, eta: float, p_star: float) -> float:
    """v^(1+p*) <rho^(j)_(eta/v), f> for one immigrant in isolation."""
    if im.v < eta:
        return im.v ** (1.0 + p_star) * float(f(im.v / eta))
    e = eta / im.v
    sc = stop_at(im.path(size_floor=_floor(e)), e)
    return im.v ** (1.0 + p_star) * empirical_mean(sc, f, p_star)


def composite_empirical(
    cp: CompositePath,
    f: Union[TestFunction, Sequence[TestFunction]],
    eta: float,
    p_star: Union[float, Sequence[float], None] = None,
) -> float:
    """<rho^I_eta, f^I> = sum_j v_j^(1+p*_j) <rho^(j)_(eta/v_j), f^(j)>."""
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    fs = _per_immigrant(f, cp)
    ps = [malthusian(im.nu) for im in cp.immigrants] if p_star is None else _per_immigrant(p_star, cp)
    return math.fsum(immigrant_empirical(im, fj, eta, pj) for im, fj, pj in zip(cp.immigrants, fs, ps))


def immigrant_count(im: ImmigrantRecord, phi: Characteristic, eta: float) -> float:
    """Z^phi of one immigrant: events with absolute parent v * P >= eta."""
    if im.v < eta:
        return 0.0
    e = eta / im.v
    return count_with_characteristic(im.path(size_floor=_floor(e)), phi, e)


def composite_count(cp: CompositePath, phi: Union[Characteristic, Sequence[Characteristic]], eta: float) -> float:
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    phis = _per_immigrant(phi, cp)
    return math.fsum(immigrant_count(im, ph, eta) for im, ph in zip(cp.immigrants, phis))


def forest_composite_stopped(
    cps: Sequence[CompositePath], eta: float, fs=(), p_star: float | None = None
) -> dict:
    """Per composite, at one eta: ``total`` <rho^I_eta, 1>, ``tail`` (immigrants
    with v_j < eta), ``small`` (stopped blocks below eta^2) and one entry per
    test function in ``fs``.  All immigrants must share one measure.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    imms = [(c, im) for c, cp in enumerate(cps) for im in cp.immigrants]
    nu = imms[0][1].nu
    if any(im.nu is not nu for _, im in imms):
        raise ValueError("vectorised kernels need one shared dislocation measure")
    ps = malthusian(nu) if p_star is None else p_star
    n = len(cps)
    out = {k: np.zeros(n) for k in ("total", "tail", "small", *fs)}
    for c, im in imms:
        if im.v < eta:
            w = im.v ** (1.0 + ps)
            out["total"][c] += w
            out["tail"][c] += w
            if im.v < eta * eta:
                out["small"][c] += w
            for f in fs:
                out[f][c] += w * float(f(im.v / eta))
    big = [(c, im) for c, im in imms if im.v >= eta]
    if big:
        comp = np.array([c for c, _ in big])
        v = np.array([im.v for _, im in big])
        e = eta / v
        forest = grow_forest(nu, np.array([im.seed for _, im in big], dtype=np.uint64), floors=np.minimum(e, 0.5))
        pidx, size, _, _ = forest_stop(forest, e)
        absz = v[pidx] * size
        w = absz ** (1.0 + ps)
        cidx = comp[pidx]
        out["total"] += np.bincount(cidx, weights=w, minlength=n)
        out["small"] += np.bincount(cidx, weights=np.where(absz < eta * eta, w, 0.0), minlength=n)
        for f in fs:
            out[f] += np.bincount(cidx, weights=w * np.asarray(f(absz / eta)), minlength=n)
    return out


def forest_composite_empirical(
    cps: Sequence[CompositePath], f: TestFunction, eta: float, p_star: float | None = None
) -> np.ndarray:
    """composite_empirical for many composites at once (one shared measure)."""
    return forest_composite_stopped(cps, eta, (f,), p_star)[f]


def lambda_I_limit_estimate(cp: CompositePath, eta_grid, p_star: float | None = None) -> list:
    """Rows (eta, <rho^I_eta, 1>, tail, small) along a decreasing eta grid.

    ``tail`` is sum_{v_j < eta} v_j^(1+p*) (immigrants still unsplit);
    ``small`` the part of <rho^I_eta, 1> from stopped blocks below eta^2.
    """
    grid = list(eta_grid)
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("eta grid must be strictly decreasing")
    ps = malthusian(cp.immigrants[0].nu) if p_star is None else p_star
    one = TestFunction.constant(1.0)
    rows = []
    for eta in grid:
        total = composite_empirical(cp, one, eta, ps)
        tail = math.fsum(im.v ** (1.0 + ps) for im in cp.immigrants if im.v < eta)
        small = []
        for im in cp.immigrants:
            if im.v < eta:
                if im.v < eta * eta:
                    small.append(im.v ** (1.0 + ps))
                continue
            e = eta / im.v
            sc = stop_at(im.path(size_floor=_floor(e)), e)
            absz = im.v * sc.size
            small.append(math.fsum(absz[absz < eta * eta] ** (1.0 + ps)))
        rows.append((eta, total, tail, math.fsum(small)))
    return rows


def composite_masses_at(cp: CompositePath, t: float, size_floor: float = 1e-9) -> RankedMassVector:
    """lambda^I(t): absolute sizes of all blocks alive at t across immigrants."""
    out = []
    for im in cp.immigrants:
        if im.t_immigrate > t:
            continue
        tau = t - im.t_immigrate
        p = im.path(size_floor=size_floor, horizon=tau)
        alive = (p.birth <= tau) & (tau < p.death)
        out.append(im.v * p.rel_size[alive])
    return RankedMassVector(np.sort(np.concatenate(out))[::-1].tolist()) if out else RankedMassVector(())


# --- vectorised multi-composite kernels ---------------------------------------


def _grow(
    cps: Sequence[CompositePath],
    horizon: float,
    abs_floor: float | None,
    rel_floor: float = 1e-12,
    max_events: int = 2_000_000,
):
    """Grow every immigrant that arrives by ``horizon`` in one forest.

    Returns (forest, composite index per forest path, immigrant list).
    """
    imms, comp = [], []
    for c, cp in enumerate(cps):
        for im in cp.immigrants:
            if im.t_immigrate <= horizon:
                imms.append(im)
                comp.append(c)
    if not imms:
        raise ValueError("no immigrant arrives before the horizon")
    nus = {id(im.nu) for im in imms}
    if len(nus) != 1:
        raise ValueError("vectorised kernels need one shared dislocation measure")
    v = np.array([im.v for im in imms])
    if abs_floor is None:
        floors = np.full(len(imms), rel_floor)
    else:
        floors = np.minimum(abs_floor / v, 0.5)
    forest = grow_forest(
        imms[0].nu,
        np.array([im.seed for im in imms], dtype=np.uint64),
        horizons=np.array([horizon - im.t_immigrate for im in imms]),
        floors=floors,
        max_events=max_events,
    )
    return forest, np.asarray(comp), imms


def mi_martingale(cps: Sequence[CompositePath], p: float, t_grid, rel_floor: float = 1e-18) -> np.ndarray:
    """M^I_t(p) = sum_{t_j <= t} v_j^(1+p) sum_n |block|^(1+p) exp(phi(p)(t - t_j)).

    Returns an array (n_composites, len(t_grid)).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    nu = cps[0].immigrants[0].nu
    ph = phi(nu, p)
    forest, comp, imms = _grow(cps, float(t_grid.max()), None, rel_floor)
    if np.any(forest.truncated):
        raise IncompletePathError("event cap hit; fewer paths per batch or a shorter grid")
    t0 = np.array([im.t_immigrate for im in imms])
    v = np.array([im.v for im in imms])
    out = np.zeros((len(cps), len(t_grid)))
    w_size = forest.rel_size ** (1.0 + p)
    for i, t in enumerate(t_grid):
        tau = t - t0[forest.path]
        alive = (forest.birth <= tau) & (tau < forest.death)
        if np.any(forest.frozen & (forest.birth <= tau)):
            raise FrozenBlockError("frozen block before t; lower rel_floor")
        per_im = np.bincount(forest.path[alive], weights=w_size[alive], minlength=forest.n_paths)
        arrived = t0 <= t
        contrib = np.where(arrived, v ** (1.0 + p) * per_im * np.exp(ph * (t - t0)), 0.0)
        out[:, i] = np.bincount(comp, weights=contrib, minlength=len(cps))
    return out


@dataclass(frozen=True)
class LargestBlocks:
    size: np.ndarray  # (n_composites, n_t)
    j: np.ndarray
    t_immigrate: np.ndarray


_BIG_CAP = 200_000_000


def _largest(cps, t_grid, abs_floor):
    """Largest tracked block per composite and time, plus the forest used."""
    forest, comp, imms = _grow(cps, float(t_grid.max()), abs_floor, max_events=_BIG_CAP)
    if np.any(forest.truncated):
        raise IncompletePathError("event cap hit while tracking the largest block; raise abs_floor")
    t0 = np.array([im.t_immigrate for im in imms])
    v = np.array([im.v for im in imms])
    jj = np.array([im.j for im in imms])
    nc, nt = len(cps), len(t_grid)
    size = np.zeros((nc, nt))
    arg = np.full((nc, nt), -1)
    tj = np.zeros((nc, nt))
    starts = forest.offsets[:-1]
    absz = forest.size * v[forest.path]
    for i, t in enumerate(t_grid):
        tau = t - t0[forest.path]
        alive = (forest.birth <= tau) & (tau < forest.death) & ~forest.frozen
        per_im = np.maximum.reduceat(np.where(alive, absz, 0.0), starts)
        per_im = np.where(t0 <= t, per_im, 0.0)
        # ties go to the smallest j: order by (composite, -size, j)
        order = np.lexsort((jj, -per_im, comp))
        first = np.ones(len(order), dtype=bool)
        first[1:] = comp[order][1:] != comp[order][:-1]
        best = order[first]
        size[comp[best], i] = per_im[best]
        arg[comp[best], i] = jj[best]
        tj[comp[best], i] = t0[best]
    return LargestBlocks(size, arg, tj), forest, comp, t0, v


def largest_blocks(cps: Sequence[CompositePath], t_grid, abs_floor: float) -> LargestBlocks:
    """lambda^I_1(t) with argmax index and its arrival time, on a time grid.

    Blocks below ``abs_floor`` are not tracked; the result is exact only
    where the maximum is at least ``abs_floor``; elsewhere IncompletePathError.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    lb, *_ = _largest(cps, t_grid, abs_floor)
    if np.any(lb.size < abs_floor):
        raise IncompletePathError("largest block fell below the floor; lower abs_floor")
    return lb


def _greedy_descent(nu: DislocationMeasure, size, birth, key, until, alpha: float = 0.0):
    """Follow each block's largest child up to local time ``until``; return sizes there.

    Uses the blocks' own keyed streams, so the result is the size of a real
    descendant alive at ``until``: a certified lower bound for the maximum.
    """
    size, birth, key, until = (np.array(a) for a in (size, birth, key, until))
    cumw = np.cumsum(nu.weights)
    first = nu.ratio_matrix()[:, 0]
    active = birth <= until
    while np.any(active):
        i = np.flatnonzero(active)
        rate = cumw[-1] * (size[i] ** alpha if alpha else 1.0)
        death = birth[i] + rng.exponential(key[i], rng.CLOCK) / rate
        go = death <= until[i]
        k = i[go]
        atom = np.minimum(np.searchsorted(cumw, rng.uniform(key[k], rng.ATOM) * cumw[-1], side="right"), len(cumw) - 1)
        size[k] *= first[atom]
        birth[k] = death[go]
        key[k] = rng.child_key(key[k], 0)
        active[i[~go]] = False
    return size


def _certified_floor(forest, comp, t0, v, t_grid, n_comp):
    """Per composite, min over t of max over frozen blocks of their greedy descendant at t."""
    T = float(t_grid.max())
    fz = np.flatnonzero(forest.frozen & (forest.birth <= T - t0[forest.path]))
    pth = forest.path[fz]
    end = _greedy_descent(forest.nu, forest.size[fz], forest.birth[fz], forest.key[fz], T - t0[pth])
    absz = end * v[pth]
    floors = np.full(n_comp, np.inf)
    for t in t_grid:
        ok = t0[pth] <= t
        best = np.zeros(n_comp)
        np.maximum.at(best, comp[pth[ok]], absz[ok])
        floors = np.minimum(floors, best)
    return floors


def largest_block(cp: CompositePath, t: float, abs_floor: float = 1e-4):
    """(size, j_argmax, t_immigrate of argmax) at time t, exact."""
    if t > cp.schedule.horizon and cp.schedule.rate > 0:
        raise ValueError("t exceeds the immigration horizon")
    lb = adaptive_largest_blocks([cp], [t], abs_floor)
    return float(lb.size[0, 0]), int(lb.j[0, 0]), float(lb.t_immigrate[0, 0])


def adaptive_largest_blocks(cps: Sequence[CompositePath], t_grid, abs_floor: float) -> LargestBlocks:
    """Exact largest blocks: a first pass at ``abs_floor``, then for composites
    where that was too coarse a second pass at a certified floor."""
    t_grid = np.asarray(t_grid, dtype=float)
    parts = []
    for cp in cps:
        lb, forest, comp, t0, v = _largest([cp], t_grid, abs_floor)
        if np.any(lb.size < abs_floor):
            floor = float(_certified_floor(forest, comp, t0, v, t_grid, 1)[0])
            if not 0.0 < floor < abs_floor:
                raise IncompletePathError("could not certify a floor for the largest block")
            del forest
            # slack: floor / v must not round above the certifying block's own size
            floor *= 1.0 - 1e-9
            lb, *_ = _largest([cp], t_grid, floor)
            if np.any(lb.size < floor):
                raise IncompletePathError("largest block below the certified floor")
        parts.append(lb)
    return LargestBlocks(
        np.vstack([p.size for p in parts]),
        np.vstack([p.j for p in parts]),
        np.vstack([p.t_immigrate for p in parts]),
    )


@dataclass(frozen=True)
class DecayEstimate:
    slope: float
    ci: tuple
    tj_over_t: float
    n_paths: int


def decay_rate_estimate(
    cps: Sequence[CompositePath],
    t_grid,
    abs_floor: float = 1e-4,
    bootstrap_n: int = 1000,
    ci_level: float = 0.95,
    seed: int = 0,
) -> DecayEstimate:
    """Pooled OLS slope of -ln lambda^I_1(t) on t with a path bootstrap CI."""
    t_grid = np.asarray(t_grid, dtype=float)
    if len(np.unique(t_grid)) < 2:
        raise ValueError("degenerate time grid")
    if len(cps) < 30:
        raise ValueError("decay_rate_estimate needs at least 30 composite paths")
    lb = adaptive_largest_blocks(cps, t_grid, abs_floor)
    y = -np.log(lb.size)
    t = np.broadcast_to(t_grid, y.shape)
    g = np.broadcast_to(np.arange(len(cps))[:, None], y.shape)
    slope, ci = slope_regression(t.ravel(), y.ravel(), g.ravel(), bootstrap_n, ci_level, seed)
    return DecayEstimate(slope, ci, float(np.max(lb.t_immigrate / t_grid)), len(cps))


def write_composite_csv(rows, fh) -> None:
    """Rows of (path_id, j, key, value) keyed by eta or t."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path_id", "j", "grid", "value"])
    for r in rows:
        w.writerow([r[0], r[1], repr(float(r[2])), repr(float(r[3]))])
