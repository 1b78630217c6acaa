"""Monte-Carlo orchestration: batching, seed plans, summaries, regression."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Mapping

import numpy as np

log = logging.getLogger(__name__)

WORKERS_ENV = "FRAGIM_WORKERS"
CSV_COLUMNS = ("statistic", "grid", "mean", "stderr", "ci_lo", "ci_hi", "n")


@dataclass(frozen=True)
class MCParams:
    n_paths: int
    base_seed: int = 0
    batch: int = 1000
    ci_level: float = 0.99

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")

    def batches(self) -> list:
        return [
            np.arange(lo, min(lo + self.batch, self.n_paths))
            for lo in range(0, self.n_paths, self.batch)
        ]


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    if raw.strip():
        n = int(raw)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return 1


@dataclass(frozen=True)
class Moments:
    """Count, mean and centred second moment; merged with Chan's update."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values) -> "Moments":
        x = np.asarray(values, dtype=float).ravel()
        if len(x) == 0:
            return cls()
        mu = math.fsum(x) / len(x)
        return cls(len(x), mu, math.fsum((x - mu) ** 2))

    def merge(self, other: "Moments") -> "Moments":
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        mean = self.mean + d * other.n / n
        m2 = self.m2 + other.m2 + d * d * self.n * other.n / n
        return Moments(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else math.nan


@dataclass(frozen=True)
class SummaryRow:
    statistic: str
    grid: float
    mean: float
    stderr: float
    ci_lo: float
    ci_hi: float
    n: int

    @property
    def flagged(self) -> bool:
        """True when no standard error is available (n < 2)."""
        return math.isnan(self.stderr)


def z_value(level: float) -> float:
    return NormalDist().inv_cdf(0.5 + level / 2.0)


def summarize(statistic: str, grid: float, values, ci_level: float = 0.99) -> SummaryRow:
    m = Moments.of(values)
    se = m.stderr
    if math.isnan(se):
        lo = hi = math.nan
    else:
        h = z_value(ci_level) * se
        lo, hi = m.mean - h, m.mean + h
    return SummaryRow(statistic, float(grid), m.mean, se, lo, hi, m.n)


@dataclass
class SummaryTable:
    rows: list = field(default_factory=list)
    values: dict = field(default_factory=dict, repr=False)  # (statistic, grid) -> per-path array

    def add(self, row: SummaryRow, values=None) -> None:
        self.rows.append(row)
        if values is not None:
            self.values[(row.statistic, row.grid)] = np.asarray(values, dtype=float)

    def get(self, statistic: str, grid: float = math.nan) -> SummaryRow:
        for r in self.rows:
            if r.statistic == statistic and (r.grid == grid or (math.isnan(r.grid) and math.isnan(grid))):
                return r
        raise KeyError((statistic, grid))

    def series(self, statistic: str) -> list:
        return sorted((r for r in self.rows if r.statistic == statistic), key=lambda r: r.grid)

    @property
    def flagged(self) -> list:
        return [r for r in self.rows if r.flagged]

    def extend(self, other: "SummaryTable") -> "SummaryTable":
        self.rows.extend(other.rows)
        self.values.update(other.values)
        return self

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.statistic, _fmt(r.grid), _fmt(r.mean), _fmt(r.stderr), _fmt(r.ci_lo), _fmt(r.ci_hi), r.n])


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


# An experiment maps an array of path indices to {(statistic, grid): per-path values}.
Experiment = Callable[[np.ndarray], Mapping]


def per_path(fn: Callable[[int], Mapping]) -> Experiment:
    """Lift a scalar closure ``index -> {key: value}`` to a batch experiment."""

    def run(indices):
        out: dict = {}
        for i in indices:
            for k, v in fn(int(i)).items():
                out.setdefault(k, []).append(v)
        return out

    return run


def run_mc(experiment: Experiment, mc: MCParams, workers: int | None = None) -> SummaryTable:
    """Run ``experiment`` over path indices 0..n_paths-1 in batches.

    Per-path values are reassembled in index order and reduced with exact
    summation, so the table does not depend on batch size, worker count or
    completion order.
    """
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise ValueError("workers must be positive")
    batches = mc.batches()
    log.debug("run_mc: %d paths in %d batches on %d workers", mc.n_paths, len(batches), workers)
    if workers == 1 or len(batches) == 1:
        results = [experiment(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(experiment, batches))
    keys: list = []
    for res in results:
        for k in res:
            if k not in keys:
                keys.append(k)
    table = SummaryTable()
    for key in keys:
        parts = []
        for b, res in zip(batches, results):
            v = np.asarray(res.get(key, []), dtype=float)
            if len(v) != len(b):
                raise ValueError(f"statistic {key!r}: batch returned {len(v)} values for {len(b)} paths")
            parts.append(v)
        values = np.concatenate(parts)
        name, grid = key if isinstance(key, tuple) else (key, math.nan)
        table.add(summarize(name, grid, values, mc.ci_level), values)
    return table


# --- regression -------------------------------------------------------------


def _ols_slope(x, y) -> float:
    xm = math.fsum(x) / len(x)
    ym = math.fsum(y) / len(y)
    sxx = math.fsum((x - xm) ** 2)
    if sxx == 0.0:
        raise ValueError("degenerate design: all t values equal")
    return math.fsum((x - xm) * (y - ym)) / sxx


def slope_regression(
    t,
    y,
    groups=None,
    bootstrap_n: int = 1000,
    ci_level: float = 0.95,
    seed: int = 0,
):
    """Pooled OLS slope of y on t with a percentile bootstrap CI over groups.

    ``groups`` labels the path each point came from; whole paths are resampled.
    Returns ``(slope, (lo, hi))``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("t and y must be 1-d arrays of equal length")
    if len(np.unique(t)) < 2:
        raise ValueError("degenerate design: need at least two distinct t values")
    slope = _ols_slope(t, y)
    if bootstrap_n <= 0:
        return slope, (slope, slope)
    groups = np.arange(len(t)) if groups is None else np.asarray(groups)
    labels, inv = np.unique(groups, return_inverse=True)
    members = [np.flatnonzero(inv == g) for g in range(len(labels))]
    gen = np.random.default_rng(seed)
    boots = []
    for _ in range(bootstrap_n):
        pick = gen.integers(0, len(labels), len(labels))
        idx = np.concatenate([members[g] for g in pick])
        if np.ptp(t[idx]) == 0:
            continue
        boots.append(_ols_slope(t[idx], y[idx]))
    a = (1.0 - ci_level) / 2.0
    lo, hi = np.quantile(boots, [a, 1.0 - a])
    return slope, (float(lo), float(hi))


# --- trend tests ------------------------------------------------------------


def decreasing_within_ci(means, stderrs, z: float) -> bool:
    """Each value is at most the previous one up to z combined standard errors."""
    return all(
        b <= a + z * math.hypot(sa, sb)
        for a, b, sa, sb in zip(means, means[1:], stderrs, stderrs[1:])
    )


def nondecreasing_within_ci(means, stderrs, z: float) -> bool:
    return decreasing_within_ci([-m for m in means], stderrs, z)


def trend_to_zero(means, stderrs, z: float) -> bool:
    """No significant increase between neighbours, and the last value sits
    significantly below the first (or is statistically zero)."""
    if not decreasing_within_ci(means, stderrs, z):
        return False
    first, last = means[0], means[-1]
    if abs(last) <= z * stderrs[-1]:
        return True
    return last + z * stderrs[-1] < first - z * stderrs[0]
