"""Event-driven simulation of mass fragmentation chains.

Blocks are grown generation by generation.  Each block's clock and atom are
drawn from its own keyed streams (see :mod:`fragim.rng`), so a block's fate
depends only on (seed, genealogical position).  This makes the output
identical whether one path or thousands are grown together, and makes the
self-similarity index a pure reparameterisation of time.

A :class:`Forest` holds many independent paths column-wise; a
:class:`PathRecord` is one path cut out of it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import rng
from .measure import DislocationMeasure, RankedMassVector


class IncompletePathError(RuntimeError):
    """A path does not reach far enough (horizon, floor or event cap)."""


class FrozenBlockError(RuntimeError):
    """A block frozen at the size floor was present where exact sizes are needed."""


@dataclass(frozen=True)
class SimulationParams:
    alpha: float = 0.0
    horizon: float = math.inf
    size_floor: float = 1e-9
    seed: int = 0
    max_events: int = 2_000_000

    def __post_init__(self):
        if not self.horizon >= 0:
            raise ValueError("horizon must be non-negative")
        if not 0.0 < self.size_floor < 1.0:
            raise ValueError("size_floor must lie in (0, 1)")
        if self.max_events <= 0:
            raise ValueError("max_events must be positive")

    def replace(self, **kw) -> "SimulationParams":
        d = dict(self.__dict__)
        d.update(kw)
        return SimulationParams(**d)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    parent_block: int
    parent_size: float
    ratios: RankedMassVector
    child_blocks: tuple


@dataclass(frozen=True)
class BlockState:
    id: int
    size: float
    birth_time: float
    parent: Optional[int]
    frozen: bool


_BLOCK_FIELDS = ("size", "birth", "death", "atom", "parent", "first_child", "frozen", "key", "depth")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PathRecord:
    """Full genealogy of one fragmentation run.

    Block arrays are indexed by block id (breadth-first order).  ``death`` is
    the split time (inf if the block never split within ``reach``), ``atom``
    the index of the sampled atom (-1 if no split) and ``first_child`` the id
    of the first child; children of one split are contiguous.
    """

    nu: DislocationMeasure
    params: SimulationParams
    initial_mass: float
    size: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    atom: np.ndarray
    parent: np.ndarray
    first_child: np.ndarray
    frozen: np.ndarray
    key: np.ndarray
    depth: np.ndarray
    reach: float
    truncated: bool

    @property
    def n_blocks(self) -> int:
        return len(self.size)

    @property
    def rel_size(self) -> np.ndarray:
        return self.size / self.initial_mass

    @property
    def split(self) -> np.ndarray:
        return self.atom >= 0

    def event_order(self) -> np.ndarray:
        """Block ids of split blocks in time order (ties by id)."""
        ids = np.flatnonzero(self.split)
        return ids[np.argsort(self.death[ids], kind="stable")]

    @property
    def events(self) -> list:
        out = []
        for b in self.event_order():
            r = self.nu.ratios[self.atom[b]]
            fc = int(self.first_child[b])
            out.append(
                JumpEvent(
                    time=float(self.death[b]),
                    parent_block=int(b),
                    parent_size=float(self.size[b]),
                    ratios=r,
                    child_blocks=tuple(range(fc, fc + len(r))),
                )
            )
        return out

    @property
    def terminal_blocks(self) -> list:
        ids = np.flatnonzero(~self.split)
        return [
            BlockState(
                int(b),
                float(self.size[b]),
                float(self.birth[b]),
                None if self.parent[b] < 0 else int(self.parent[b]),
                bool(self.frozen[b]),
            )
            for b in ids
        ]

    def children(self, b: int) -> range:
        if self.atom[b] < 0:
            return range(0)
        fc = int(self.first_child[b])
        return range(fc, fc + len(self.nu.ratios[self.atom[b]]))

    @property
    def genealogy(self) -> dict:
        return {int(b): list(self.children(b)) for b in np.flatnonzero(self.split)}


@dataclass(frozen=True, eq=False)
class Forest:
    """Many independent paths stored column-wise; blocks grouped by path."""

    nu: DislocationMeasure
    alpha: float
    mass: np.ndarray  # per path
    horizon: np.ndarray  # per path
    floor: np.ndarray  # per path, relative to mass
    seed: np.ndarray  # per path
    reach: np.ndarray  # per path
    truncated: np.ndarray  # per path
    offsets: np.ndarray  # len n_paths + 1
    path: np.ndarray  # per block
    size: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    atom: np.ndarray
    parent: np.ndarray  # local ids
    first_child: np.ndarray  # local ids
    frozen: np.ndarray
    key: np.ndarray
    depth: np.ndarray
    max_events: int

    @property
    def n_paths(self) -> int:
        return len(self.mass)

    @property
    def rel_size(self) -> np.ndarray:
        return self.size / self.mass[self.path]

    @property
    def parent_global(self) -> np.ndarray:
        """Parent index into the forest arrays (-1 for roots)."""
        g = self.parent + self.offsets[self.path]
        return np.where(self.parent >= 0, g, -1)

    def record(self, i: int) -> PathRecord:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        params = SimulationParams(
            alpha=self.alpha,
            horizon=float(self.horizon[i]),
            size_floor=float(self.floor[i]),
            seed=int(self.seed[i]),
            max_events=self.max_events,
        )
        cols = {f: _readonly(getattr(self, f)[lo:hi]) for f in _BLOCK_FIELDS}
        return PathRecord(
            nu=self.nu,
            params=params,
            initial_mass=float(self.mass[i]),
            reach=float(self.reach[i]),
            truncated=bool(self.truncated[i]),
            **cols,
        )

    def records(self) -> list:
        return [self.record(i) for i in range(self.n_paths)]


def grow_forest(
    nu: DislocationMeasure,
    seeds: Iterable[int],
    masses=1.0,
    horizons=math.inf,
    floors=1e-9,
    alpha: float = 0.0,
    max_events: int = 2_000_000,
    keys=None,
) -> Forest:
    """Grow one independent fragmentation per seed.

    ``masses``, ``horizons`` and ``floors`` broadcast against ``seeds``;
    floors are relative to the path's initial mass.  ``keys`` overrides the
    root keys derived from the seeds (used for sub-paths keyed elsewhere).
    """
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    n = len(seeds)
    masses = np.broadcast_to(np.asarray(masses, float), (n,)).copy()
    horizons = np.broadcast_to(np.asarray(horizons, float), (n,)).copy()
    floors = np.broadcast_to(np.asarray(floors, float), (n,)).copy()
    if np.any(masses <= 0) or np.any(horizons < 0) or np.any((floors <= 0) | (floors >= 1)):
        raise ValueError("need positive masses, non-negative horizons and floors in (0, 1)")
    root_keys = rng.root_key(seeds) if keys is None else np.asarray(keys, dtype=np.uint64)

    weights = np.asarray(nu.weights)
    cumw = np.cumsum(weights)
    total = float(cumw[-1])
    ratio_mat = nu.ratio_matrix()
    n_kids = np.array([len(r) for r in nu.ratios])

    # generation chunks
    ch_size = [masses]
    ch_birth = [np.zeros(n)]
    ch_key = [root_keys]
    ch_path = [np.arange(n)]
    ch_parent = [np.full(n, -1, dtype=np.int64)]
    ch_death, ch_atom, ch_frozen, ch_first = [], [], [], []

    cut = horizons.copy()
    truncated = np.zeros(n, dtype=bool)
    n_events = np.zeros(n, dtype=np.int64)
    offset = 0  # global index of the current generation's first block

    while True:
        size, birth, key, path = ch_size[-1], ch_birth[-1], ch_key[-1], ch_path[-1]
        m = len(size)
        frozen = size < floors[path] * masses[path]
        rate = total * (size**alpha if alpha != 0.0 else 1.0)
        death = birth + rng.exponential(key, rng.CLOCK) / rate
        u = rng.uniform(key, rng.ATOM) * total
        atom = np.minimum(np.searchsorted(cumw, u, side="right"), len(cumw) - 1)
        is_event = (~frozen) & (death < horizons[path])
        n_events += np.bincount(path[is_event], minlength=n)

        over = n_events > max_events
        if np.any(over):
            cut = _update_cut(cut, over, ch_death, ch_path, death, path, is_event, max_events)
            truncated |= over

        expand = is_event & (death < cut[path])
        ch_death.append(np.where(is_event, death, np.inf))
        ch_atom.append(np.where(is_event, atom, -1))
        ch_frozen.append(frozen)

        first = np.full(m, -1, dtype=np.int64)
        if not np.any(expand):
            ch_first.append(first)
            break
        par = np.flatnonzero(expand)
        k = n_kids[atom[par]]
        starts = np.cumsum(k) - k
        first[par] = offset + m + starts
        ch_first.append(first)

        rep = np.repeat(par, k)
        idx = np.arange(len(rep)) - np.repeat(starts, k)
        ratio = ratio_mat[atom[rep], idx]
        ch_size.append(size[rep] * ratio)
        ch_birth.append(death[rep])
        ch_key.append(rng.child_key(key[rep], idx))
        ch_path.append(path[rep])
        ch_parent.append(offset + rep)
        offset += m

    cols = dict(
        size=np.concatenate(ch_size),
        birth=np.concatenate(ch_birth),
        death=np.concatenate(ch_death),
        atom=np.concatenate(ch_atom),
        frozen=np.concatenate(ch_frozen),
        key=np.concatenate(ch_key),
        path=np.concatenate(ch_path),
        parent=np.concatenate(ch_parent),
        first_child=np.concatenate(ch_first),
        depth=np.concatenate([np.full(len(c), d, dtype=np.int32) for d, c in enumerate(ch_size)]),
    )
    if np.any(truncated):
        cols = _apply_cut(cols, cut)
    reach = np.where(truncated, cut, horizons)
    return _group_by_path(nu, alpha, masses, horizons, floors, seeds, reach, truncated, cols, max_events)


def _update_cut(cut, over, ch_death, ch_path, death, path, is_event, max_events):
    """Lower each overflowing path's cut to its (max_events+1)-th event time."""
    d_all = np.concatenate([*ch_death, np.where(is_event, death, np.inf)])
    p_all = np.concatenate(ch_path)
    sel = over[p_all] & np.isfinite(d_all)
    d, p = d_all[sel], p_all[sel]
    order = np.lexsort((d, p))
    d, p = d[order], p[order]
    start = np.searchsorted(p, np.arange(len(over)))
    cut = cut.copy()
    for i in np.flatnonzero(over):
        cut[i] = min(cut[i], d[start[i] + max_events])
    return cut


def _apply_cut(cols, cut):
    """Drop events at or after each path's cut and blocks born from them."""
    c = cut[cols["path"]]
    keep = cols["birth"] < c
    dropped = cols["death"] >= c
    cols["death"] = np.where(dropped, np.inf, cols["death"])
    cols["atom"] = np.where(dropped, -1, cols["atom"])
    cols["first_child"] = np.where(dropped, -1, cols["first_child"])
    new_idx = np.cumsum(keep) - 1
    for f in ("parent", "first_child"):
        v = cols[f]
        cols[f] = np.where(v >= 0, new_idx[np.maximum(v, 0)], -1)
    return {f: v[keep] for f, v in cols.items()}


def _group_by_path(nu, alpha, masses, horizons, floors, seeds, reach, truncated, cols, max_events):
    order = np.argsort(cols["path"], kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    cols = {f: v[order] for f, v in cols.items()}
    counts = np.bincount(cols["path"], minlength=len(masses))
    offsets = np.concatenate([[0], np.cumsum(counts)])
    base = offsets[cols["path"]]
    for f in ("parent", "first_child"):
        v = cols[f]
        cols[f] = np.where(v >= 0, inv[np.maximum(v, 0)] - base, -1)
    return Forest(
        nu=nu,
        alpha=alpha,
        mass=masses,
        horizon=horizons,
        floor=floors,
        seed=seeds,
        reach=reach,
        truncated=truncated,
        offsets=offsets,
        max_events=max_events,
        **cols,
    )


def simulate(nu: DislocationMeasure, params: SimulationParams, initial_mass: float = 1.0) -> PathRecord:
    """Simulate one fragmentation path started from a single block."""
    forest = grow_forest(
        nu,
        [params.seed],
        masses=initial_mass,
        horizons=params.horizon,
        floors=params.size_floor,
        alpha=params.alpha,
        max_events=params.max_events,
    )
    rec = forest.record(0)
    # keep the caller's params verbatim (seed may exceed uint64 round-trip otherwise)
    return PathRecord(**{**rec.__dict__, "params": params})


def simulate_many(nu: DislocationMeasure, params: SimulationParams, n_paths: int, initial_mass: float = 1.0) -> Forest:
    """Paths with seeds ``params.seed XOR i`` for i in range(n_paths)."""
    seeds = rng.path_seed(params.seed, np.arange(n_paths))
    return grow_forest(
        nu,
        seeds,
        masses=initial_mass,
        horizons=params.horizon,
        floors=params.size_floor,
        alpha=params.alpha,
        max_events=params.max_events,
    )


def _check_time(path: PathRecord, t: float) -> None:
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if t > path.params.horizon:
        raise ValueError(f"time {t} beyond horizon {path.params.horizon}")
    if path.truncated and t >= path.reach:
        raise IncompletePathError(
            f"path truncated by max_events at time {path.reach:.6g}; requested {t}"
        )


def alive_mask(path, t: float) -> np.ndarray:
    return (path.birth <= t) & (t < path.death)


def masses_at(path: PathRecord, t: float) -> RankedMassVector:
    """Ranked sizes of all blocks alive at time t (frozen blocks included)."""
    _check_time(path, t)
    s = path.size[alive_mask(path, t)]
    return RankedMassVector(np.sort(s)[::-1].tolist())


def additive_martingale(path: PathRecord, p: float, t: float, phi_value: float) -> float:
    """sum_k (size_k(t)/m)^(1+p) * exp(phi_value * t)."""
    if not p > -1:
        raise ValueError("p must exceed -1")
    _check_time(path, t)
    if np.any(path.frozen & (path.birth <= t)):
        raise FrozenBlockError(
            f"a block was frozen at size floor {path.params.size_floor:g} before t={t}; "
            "use a smaller size_floor"
        )
    s = path.rel_size[alive_mask(path, t)]
    return math.fsum(s ** (1.0 + p)) * math.exp(phi_value * t)


def forest_martingale(forest: Forest, p: float, t: float, phi_value: float) -> np.ndarray:
    """Per-path additive martingale at time t (vectorised over a forest)."""
    if np.any(forest.truncated & (forest.reach <= t)) or np.any(forest.horizon < t):
        raise IncompletePathError("some paths do not reach the requested time")
    alive = (forest.birth <= t) & (t < forest.death)
    if np.any(forest.frozen & (forest.birth <= t)):
        raise FrozenBlockError("frozen blocks present before t; use a smaller size_floor")
    w = forest.rel_size[alive] ** (1.0 + p)
    return np.bincount(forest.path[alive], weights=w, minlength=forest.n_paths) * math.exp(phi_value * t)


def replay(path: PathRecord) -> list:
    """Apply the events in time order to the initial block; return final sizes.

    Sizes are recomputed from the ratios, not read from the record.
    """
    live = {0: path.initial_mass}
    for ev in path.events:
        x = live.pop(ev.parent_block)
        for c, r in zip(ev.child_blocks, ev.ratios):
            live[c] = x * r
    return sorted(live.values(), reverse=True)


def write_event_log(path: PathRecord, fh) -> None:
    """CSV event log: time, parent_id, parent_size, ratio_1..ratio_k."""
    k = path.nu.max_children
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["time", "parent_id", "parent_size", *[f"ratio_{i + 1}" for i in range(k)]])
    for ev in path.events:
        pad = [""] * (k - len(ev.ratios))
        w.writerow([repr(ev.time), ev.parent_block, repr(ev.parent_size), *map(repr, ev.ratios), *pad])
