"""First-passage stopping lines below a size threshold eta.

For every line of descent the stopping line picks the first block whose
size (relative to the initial mass) drops below eta.  Computed after the
fact from the recorded genealogy, so one path serves any number of eta.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .fragcore import Forest, IncompletePathError, PathRecord, SimulationParams, simulate
from .functions import TestFunction, parse_test_function  # noqa: F401  (re-exported)
from .measure import DislocationMeasure


class IncompleteStoppingLine(IncompletePathError):
    """Some line of descent is still at or above eta where the record ends."""

    def __init__(self, eta: float, blocks):
        self.eta = eta
        self.blocks = list(blocks)
        shown = ", ".join(map(str, self.blocks[:10]))
        more = "" if len(self.blocks) <= 10 else f" (+{len(self.blocks) - 10} more)"
        super().__init__(
            f"incomplete stopping line at eta={eta:g}: unsplit blocks of size >= eta: {shown}{more}"
        )


@dataclass(frozen=True)
class StoppedConfiguration:
    eta: float
    size: np.ndarray  # relative to the initial mass
    parent_size: np.ndarray
    creation_time: np.ndarray
    block: np.ndarray  # block ids in the source path

    @property
    def blocks(self) -> list:
        return list(zip(self.size.tolist(), self.parent_size.tolist(), self.creation_time.tolist()))

    def __len__(self) -> int:
        return len(self.size)


def _check_eta(eta: float) -> None:
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")


def _unfinished(rel, split, eta) -> np.ndarray:
    return np.flatnonzero((rel >= eta) & ~split)


def stop_at(path: PathRecord, eta: float) -> StoppedConfiguration:
    """Stopping line of first passage below eta."""
    _check_eta(eta)
    if eta < path.params.size_floor:
        raise ValueError(f"eta={eta} is below the size floor {path.params.size_floor}")
    rel = path.rel_size
    bad = _unfinished(rel, path.split, eta)
    if len(bad):
        raise IncompleteStoppingLine(eta, bad)
    par = path.parent
    has_parent = par >= 0
    prel = np.where(has_parent, rel[np.maximum(par, 0)], np.inf)
    sel = np.flatnonzero((rel < eta) & (prel >= eta))
    return StoppedConfiguration(
        eta=eta,
        size=rel[sel],
        parent_size=prel[sel],
        creation_time=path.birth[sel],
        block=sel,
    )


def lambda_martingale(sc: StoppedConfiguration, p_star: float) -> float:
    """Lambda_eta(p*) = sum_k size_k^(1+p*)."""
    return math.fsum(sc.size ** (1.0 + p_star))


def empirical_mean(sc: StoppedConfiguration, f: TestFunction, p_star: float) -> float:
    """<rho_eta, f> = sum_k size_k^(1+p*) f(size_k / eta)."""
    return math.fsum(sc.size ** (1.0 + p_star) * np.asarray(f(sc.size / sc.eta)))


def simulate_stopped(
    nu: DislocationMeasure,
    params: SimulationParams,
    eta: float,
    initial_mass: float = 1.0,
    max_doublings: int = 20,
):
    """Simulate and stop at eta, doubling the horizon until the line completes.

    Keyed streams make a longer run extend the shorter one, so retries never
    change blocks already simulated.  Returns ``(path, configuration)``.
    """
    for _ in range(max_doublings + 1):
        path = simulate(nu, params, initial_mass)
        try:
            return path, stop_at(path, eta)
        except IncompleteStoppingLine:
            if path.truncated:
                raise
            params = params.replace(horizon=2.0 * params.horizon)
    raise IncompleteStoppingLine(eta, [])


def expected_empirical_mean(nu: DislocationMeasure, f: TestFunction, eta: float, p_star: float) -> float:
    """Exact E<rho_eta, f> for a path started from unit mass.

    Uses the many-to-one recursion V(x) = x^(1+p*) f(x/eta) for x < eta and
    V(x) = sum_a (w_a/total) sum_n V(x r_an) otherwise.  A block's size is
    determined by how often each distinct ratio occurred along its line, so
    the recursion is memoised on that count vector.
    """
    _check_eta(eta)
    values = sorted({x for r in nu.ratios for x in r})
    index = {x: i for i, x in enumerate(values)}
    probs = [w / nu.total_rate for w in nu.weights]
    moves = [[index[x] for x in r] for r in nu.ratios]
    memo: dict = {}

    def size(counts):
        return math.prod(x**c for x, c in zip(values, counts))

    def v(counts):
        if counts in memo:
            return memo[counts]
        x = size(counts)
        if x < eta:
            out = x ** (1.0 + p_star) * float(f(x / eta))
        else:
            terms = []
            for pa, mv in zip(probs, moves):
                for i in mv:
                    nxt = counts[:i] + (counts[i] + 1,) + counts[i + 1 :]
                    terms.append(pa * v(nxt))
            out = math.fsum(terms)
        memo[counts] = out
        return out

    # depth-first on a worklist to stay clear of the recursion limit
    stack = [tuple([0] * len(values))]
    while stack:
        c = stack[-1]
        if c in memo:
            stack.pop()
            continue
        if size(c) < eta:
            v(c)
            stack.pop()
            continue
        pending = []
        for mv in moves:
            for i in mv:
                nxt = c[:i] + (c[i] + 1,) + c[i + 1 :]
                if nxt not in memo:
                    pending.append(nxt)
        if pending:
            stack.extend(pending)
        else:
            v(c)
            stack.pop()
    return memo[tuple([0] * len(values))]


def forest_stop(forest: Forest, eta):
    """Stopped blocks of every path in a forest.

    ``eta`` is a scalar or one value per path.  Returns ``(path_index, size,
    parent_size, creation_time)`` arrays, sizes relative to each path's
    initial mass.
    """
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (forest.n_paths,))
    if np.any((eta <= 0) | (eta > 1)):
        raise ValueError("eta must lie in (0, 1]")
    if np.any(eta < forest.floor):
        raise ValueError("eta is below some path's size floor")
    rel = forest.rel_size
    e = eta[forest.path]
    bad = _unfinished(rel, forest.atom >= 0, e)
    if len(bad):
        raise IncompleteStoppingLine(float(np.min(e[bad])), bad)
    pg = forest.parent_global
    prel = np.where(pg >= 0, rel[np.maximum(pg, 0)], np.inf)
    sel = (rel < e) & (prel >= e)
    return forest.path[sel], rel[sel], prel[sel], forest.birth[sel]


def forest_empirical(forest: Forest, eta, fs, p_star: float) -> dict:
    """Per-path <rho_eta, f> for each test function; ``None`` key gives Lambda_eta."""
    pidx, size, _, _ = forest_stop(forest, eta)
    e = np.broadcast_to(np.asarray(eta, dtype=float), (forest.n_paths,))[pidx]
    w = size ** (1.0 + p_star)
    out = {None: np.bincount(pidx, weights=w, minlength=forest.n_paths)}
    for f in fs:
        out[f] = np.bincount(pidx, weights=w * np.asarray(f(size / e)), minlength=forest.n_paths)
    return out


def write_stopped_csv(configs, fh) -> None:
    """CSV rows: eta, size, parent_size, creation_time."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["eta", "size", "parent_size", "creation_time"])
    for sc in configs:
        order = np.lexsort((sc.creation_time, -sc.size))
        for i in order:
            w.writerow([repr(sc.eta), repr(float(sc.size[i])), repr(float(sc.parent_size[i])), repr(float(sc.creation_time[i]))])
