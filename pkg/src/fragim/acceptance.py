"""Acceptance criteria as executable checks.

Each ``criterion_N`` returns a :class:`Verdict` made of sub-checks with
observed value, expected value and tolerance.  ``run_all`` runs them in
order; the CLI ``verify`` subcommand writes the result as JSON.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .characteristic import COUNT, empirical_adapter, forest_count, limit_constant_estimate
from .corpus import BINARY, DISSIPATIVE, MIXTURE
from .fragcore import grow_forest
from .functions import TestFunction
from .immigration import (
    ImmigrationSchedule,
    ImmigrantRecord,
    composite_count,
    decay_rate_estimate,
    forest_composite_empirical,
    immigrant_count,
    immigrant_empirical,
    sample_many,
)
from .measure import malthusian, pbar, phi, phi_prime, rho_pairing, structural_constants
from .spine import reconstruct, sample_spine_atoms, spine_immigration_measure, tilted_moment_check
from .stats import MCParams, decreasing_within_ci, nondecreasing_within_ci, trend_to_zero, z_value
from .stopline import expected_empirical_mean, forest_empirical
from .experiments import (
    characteristic_table,
    immigration_table,
    lambda_table,
    martingale_table,
    mi_table,
    within,
)

THETA_SCHEDULE = dict(rate=1.0, theta=0.5)


@dataclass
class Check:
    name: str
    observed: object
    expected: object
    tolerance: object
    passed: bool
    label: str = ""


@dataclass
class Verdict:
    criterion: int
    title: str
    checks: list = field(default_factory=list)
    seconds: float = 0.0
    note: str = ""

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.label != "diagnostic")

    def add(self, name, observed, expected, tolerance, passed, label="") -> bool:
        self.checks.append(Check(name, _plain(observed), _plain(expected), _plain(tolerance), bool(passed), label))
        return bool(passed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def line(self) -> str:
        bad = [c.name for c in self.checks if not c.passed and c.label != "diagnostic"]
        status = "PASS" if self.passed else "FAIL"
        tail = f" (failed: {', '.join(bad)})" if bad else ""
        return f"[{status}] criterion {self.criterion}: {self.title} [{self.seconds:.1f}s]{tail}"


def _plain(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, (tuple, list)):
        return [_plain(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _timed(fn):
    def run(**kw):
        t0 = time.perf_counter()
        v = fn(**kw)
        v.seconds = time.perf_counter() - t0
        return v

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


# --- 1 --------------------------------------------------------------------------


@_timed
def criterion_1() -> Verdict:
    v = Verdict(1, "analytics: phi, p*, p-bar")
    t0 = time.perf_counter()
    v.add("phi(binary, 0)", phi(BINARY, 0.0), 0.0, 1e-12, abs(phi(BINARY, 0.0)) <= 1e-12)
    v.add("phi(binary, 1)", phi(BINARY, 1.0), 0.5, 1e-12, abs(phi(BINARY, 1.0) - 0.5) <= 1e-12)
    closed = -1.0 + math.log2(2.0 / (math.sqrt(5.0) - 1.0))
    ps = malthusian(DISSIPATIVE)
    v.add("p*(dissipative)", ps, closed, 1e-10, abs(ps - closed) <= 1e-10)
    for name, nu in (("binary", BINARY), ("dissipative", DISSIPATIVE), ("mixture", MIXTURE)):
        pb = pbar(nu)
        res = abs((1.0 + pb) * phi_prime(nu, pb) - phi(nu, pb))
        v.add(f"p-bar residual ({name})", res, 0.0, 1e-10, res < 1e-10)
    dt = time.perf_counter() - t0
    v.add("runtime", dt, "< 1 s", 1.0, dt < 1.0)
    return v


# --- 2 --------------------------------------------------------------------------


@_timed
def criterion_2(n_paths: int = 20000, base_seed: int = 2, batch: int = 5000, workers=None) -> Verdict:
    v = Verdict(2, "additive martingale means M_t(p) = 1")
    t0 = time.perf_counter()
    for name, nu in (("binary", BINARY), ("dissipative", DISSIPATIVE)):
        ps = malthusian(nu)
        grid_p = [ps, 0.5, 1.0]
        tab = martingale_table(nu, grid_p, [1.0, 2.0, 4.0], MCParams(n_paths, base_seed, batch), workers=workers)
        for p in grid_p:
            for t in (1.0, 2.0, 4.0):
                r = tab.get(f"M(p={p:.12g})", t)
                v.add(f"{name} p={p:.4g} t={t:g}", (r.mean, r.stderr), 1.0, "3 SE", within(r.mean, r.stderr, 1.0))
    dt = time.perf_counter() - t0
    v.add("runtime", dt, "< 120 s", 120.0, dt < 120.0)
    return v


# --- 3 --------------------------------------------------------------------------


@_timed
def criterion_3(n_paths: int = 20000, base_seed: int = 3, batch: int = 2000, workers=None) -> Verdict:
    v = Verdict(3, "stopping-line martingale Lambda_eta(p*) has mean 1")
    for name, nu in (("binary", BINARY), ("dissipative", DISSIPATIVE)):
        tab = lambda_table(nu, [0.1, 0.01, 0.001], MCParams(n_paths, base_seed, batch), workers=workers)
        for r in tab.series("Lambda"):
            v.add(f"{name} eta={r.grid:g}", (r.mean, r.stderr), 1.0, "3 SE", within(r.mean, r.stderr, 1.0))
    return v


# --- 4 --------------------------------------------------------------------------


@_timed
def criterion_4() -> Verdict:
    v = Verdict(4, "rho normalisation <rho, 1> = 1 (conservative corpus)")
    for name, nu in (("binary", BINARY), ("mixture", MIXTURE)):
        val = rho_pairing(nu, TestFunction.constant(1.0), 0.0)
        v.add(name, val, 1.0, 1e-8, abs(val - 1.0) <= 1e-8)
    return v


# --- 5 --------------------------------------------------------------------------


@_timed
def criterion_5(n_paths: int = 20000, base_seed: int = 5, batch: int = 2000, workers=None) -> Verdict:
    v = Verdict(5, "empirical-mean convergence <rho_eta, f> -> <rho, f> (mixture, f = 1[0.4,0.8))")
    f = TestFunction.indicator(0.4, 0.8)
    target = rho_pairing(MIXTURE, f, 0.0)
    grid = [0.1, 0.01, 0.001]
    tab = lambda_table(MIXTURE, grid, MCParams(n_paths, base_seed, batch), fs=[f], workers=workers)
    rows = [tab.get(f"rho_eta[{f.name}]", e) for e in grid]
    last = rows[-1]
    tol = max(3.0 * last.stderr, 0.02)
    v.add("|mean - <rho,f>| at eta=1e-3", abs(last.mean - target), 0.0, tol, abs(last.mean - target) <= tol)
    disc = [abs(r.mean - target) for r in rows]
    z = z_value(0.99)
    v.add(
        "discrepancy decreasing over eta",
        disc,
        "decreasing",
        "99% CI",
        decreasing_within_ci(disc, [r.stderr for r in rows], z) and disc[-1] < disc[0],
    )
    # reported, not gated: the exact finite-eta means show where the MC should sit
    exact = [expected_empirical_mean(MIXTURE, f, e, 0.0) for e in grid]
    for r, ex in zip(rows, exact):
        v.add(
            f"MC matches exact finite-eta mean, eta={r.grid:g}",
            (r.mean, r.stderr),
            ex,
            "3 SE",
            within(r.mean, r.stderr, ex),
            label="diagnostic",
        )
    v.note = f"<rho,f> = {target:.10g}; exact E<rho_eta,f> = {', '.join(f'{x:.6g}' for x in exact)}"
    return v


# --- 6 --------------------------------------------------------------------------


@_timed
def criterion_6(n_paths: int = 100, base_seed: int = 6, lc_paths: int = 2000) -> Verdict:
    v = Verdict(6, "adapter identity eta^(1+p*) Z^adapter = <rho_eta, f>")
    fs = [TestFunction.constant(1.0), TestFunction.indicator(0.4, 0.8), TestFunction.power(2.0)]
    etas = [0.5, 0.1, 0.01]
    t0 = time.perf_counter()
    for name, nu in (("binary", BINARY), ("dissipative", DISSIPATIVE), ("mixture", MIXTURE)):
        ps = malthusian(nu)
        forest = grow_forest(nu, rng.path_seed(base_seed, np.arange(n_paths)), floors=min(etas))
        worst = 0.0
        for f in fs:
            ad = empirical_adapter(f, ps)
            for eta in etas:
                lhs = eta ** (1.0 + ps) * forest_count(forest, ad, eta)
                rhs = forest_empirical(forest, eta, [f], ps)[f]
                scale = np.maximum(np.abs(rhs), np.finfo(float).tiny)
                worst = max(worst, float(np.max(np.abs(lhs - rhs) / scale)))
        v.add(f"{name}: max relative error", worst, 0.0, 1e-12, worst <= 1e-12)
    dt = time.perf_counter() - t0
    v.add("runtime", dt, "< 10 s", 10.0, dt < 10.0)
    # limit-constant cross-check
    for name, nu in (("binary", BINARY), ("dissipative", DISSIPATIVE), ("mixture", MIXTURE)):
        ps = malthusian(nu)
        f = TestFunction.indicator(0.4, 0.8)
        est, se = limit_constant_estimate(nu, empirical_adapter(f, ps), ps, MCParams(lc_paths, base_seed))
        ref = rho_pairing(nu, f, ps)
        tol = max(3.0 * se, 1e-8)
        v.add(
            f"limit constant vs rho_pairing ({name})",
            (est, se),
            ref,
            "max(3 SE, 1e-8)",
            abs(est - ref) <= tol,
            label="consistency (finite-nu regime)",
        )
    return v


# --- 7 --------------------------------------------------------------------------


def _isolated(cp):
    """Fresh immigrant records with the same seeds: nothing shared with ``cp``."""
    return [ImmigrantRecord(im.j, im.t_immigrate, im.v, im.seed, im.nu) for im in cp.immigrants]


@_timed
def criterion_7(n_exact: int = 10, n_paths: int = 10000, base_seed: int = 7, batch: int = 1000, workers=None) -> Verdict:
    v = Verdict(7, "immigration: exact decomposition and Poisson-integral mean")
    sched = ImmigrationSchedule(horizon=10.0, **THETA_SCHEDULE)
    nu = DISSIPATIVE
    ps = malthusian(nu)
    f = TestFunction.indicator(0.4, 0.8)
    phi_ad = empirical_adapter(f, ps)
    worst_e = worst_c = 0.0
    for cp in sample_many(sched, nu, n_exact, base_seed):
        for eta in (0.1, 0.01):
            comp = float(forest_composite_empirical([cp], f, eta, ps)[0])
            iso = math.fsum(immigrant_empirical(im, f, eta, ps) for im in _isolated(cp))
            worst_e = max(worst_e, abs(comp - iso) / max(abs(iso), 1e-300))
            for ph in (COUNT, phi_ad):
                cc = composite_count(cp, ph, eta)
                iso_c = math.fsum(immigrant_count(im, ph, eta) for im in _isolated(cp))
                worst_c = max(worst_c, abs(cc - iso_c) / max(abs(iso_c), 1e-300))
    v.add("composite_empirical = sum of isolated", worst_e, 0.0, 1e-12, worst_e <= 1e-12)
    v.add("composite_count = sum of isolated", worst_c, 0.0, 1e-12, worst_c <= 1e-12)
    tab = immigration_table(sched, nu, [0.01], MCParams(n_paths, base_seed, batch), workers=workers)
    r = tab.get("rhoI", 0.01)
    target = sched.expected_mass_sum(ps)
    v.add("E<rho^I_eta, 1> at eta=1e-2", (r.mean, r.stderr), target, "3 SE", within(r.mean, r.stderr, target))
    return v


# --- 8 --------------------------------------------------------------------------


@_timed
def criterion_8(n_paths: int = 10000, base_seed: int = 8, batch: int = 500, p: float = 0.5, workers=None) -> Verdict:
    v = Verdict(8, "M^I_t(p) is a submartingale (means non-decreasing)")
    sched = ImmigrationSchedule(horizon=8.0, **THETA_SCHEDULE)
    grid = [1.0, 2.0, 4.0, 8.0]
    tab = mi_table(sched, BINARY, [p], grid, MCParams(n_paths, base_seed, batch), workers=workers)
    rows = tab.series(f"MI(p={p:.12g})")
    means = [r.mean for r in rows]
    ses = [r.stderr for r in rows]
    v.add("means non-decreasing over t", means, "non-decreasing", "99% CI overlap", nondecreasing_within_ci(means, ses, z_value(0.99)))
    for r in rows:
        exp = sched.expected_mass_sum(p, r.grid)
        v.add(f"E M^I_t at t={r.grid:g}", (r.mean, r.stderr), exp, "3 SE", within(r.mean, r.stderr, exp), label="diagnostic")
    return v


# --- 9 --------------------------------------------------------------------------


@_timed
def criterion_9(n_paths: int = 200, base_seed: int = 9, bootstrap_n: int = 1000) -> Verdict:
    v = Verdict(9, "largest-block decay rate")
    t0 = time.perf_counter()
    nu = MIXTURE
    c = structural_constants(nu)
    target = c.phi_prime_at_bar
    grid = np.arange(10.0, 41.0, 1.0)
    floor = math.exp(-target * grid[-1])
    plain = sample_many(ImmigrationSchedule(), nu, n_paths, base_seed)
    d0 = decay_rate_estimate(plain, grid, floor, bootstrap_n, seed=base_seed)
    v.add(
        "no immigration: slope within 10% of phi'(p-bar)",
        (d0.slope, d0.ci),
        target,
        0.1 * target,
        abs(d0.slope - target) <= 0.1 * target,
    )
    sched = ImmigrationSchedule(horizon=float(grid[-1]), **THETA_SCHEDULE)
    imm = sample_many(sched, nu, n_paths, base_seed + 1)
    d1 = decay_rate_estimate(imm, grid, floor, bootstrap_n, seed=base_seed + 1)
    lo = (1.0 - d1.tj_over_t) * target - 0.05
    hi = target + 0.05
    v.add("theta=0.5 immigration: slope in [(1 - max t_j/t) phi'(p-bar) - 0.05, phi'(p-bar) + 0.05]", (d1.slope, d1.ci), (lo, hi), 0.05, lo <= d1.slope <= hi)
    dt = time.perf_counter() - t0
    v.add("runtime", dt, "< 600 s", 600.0, dt < 600.0)
    v.note = f"max t_j/t = {d1.tj_over_t:.4g}"
    return v


# --- 10 -------------------------------------------------------------------------


@_timed
def criterion_10(n_recon: int = 50, n_moment: int = 10000, n_chi: int = 100000, base_seed: int = 10) -> Verdict:
    from scipy.stats import chisquare

    v = Verdict(10, "spine decomposition")
    gen = np.random.default_rng(base_seed)
    worst = 0.0
    for i in range(n_recon):
        for t in gen.uniform(0.0, 4.0, 10):
            r = reconstruct(MIXTURE, 0.5, 4.0, base_seed * 1000 + i, t=float(t))
            worst = max(worst, r.residual)
    v.add("reconstruction identity", worst, 0.0, 1e-12, worst <= 1e-12)
    for p, q, t in ((0.0, 1.0, 2.0), (0.5, 0.5, 2.0), (1.0, -0.3, 1.0)):
        m, se, a = tilted_moment_check(BINARY, p, q, t, MCParams(n_moment, base_seed))
        v.add(f"tilted moment (p={p:g}, q={q:g}, t={t:g})", (m, se), a, "3 SE", within(m, se, a))
    atoms = sample_spine_atoms(MIXTURE, 0.5, n_chi, base_seed)
    w = np.array(spine_immigration_measure(MIXTURE, 0.5).weights)
    counts = np.bincount(atoms, minlength=len(w))
    pval = float(chisquare(counts, w / w.sum() * counts.sum()).pvalue)
    v.add("sibling law chi-square p-value", pval, "> 0.01", 0.01, pval > 0.01)
    return v


# --- 11 -------------------------------------------------------------------------


@_timed
def criterion_11(n_paths: int = 2000, base_seed: int = 11, beta: float = 0.25, batch: int = 500, workers=None) -> Verdict:
    v = Verdict(11, "beta-damping and small-block negligibility")
    z = z_value(0.99)
    grid = [0.1, 0.01, 0.001]
    tab = characteristic_table(BINARY, [COUNT], grid, MCParams(n_paths, base_seed, batch), beta=beta, workers=workers)
    rows = tab.series("Z[count]")[::-1]  # eta decreasing
    means = [r.mean for r in rows]
    v.add("eta^(1+p*+beta) Z_eta trends to 0", means, "decreasing to 0", "99% CI", trend_to_zero(means, [r.stderr for r in rows], z))
    sched = ImmigrationSchedule(horizon=40.0, **THETA_SCHEDULE)
    tab = immigration_table(sched, BINARY, grid, MCParams(n_paths // 2, base_seed, batch), workers=workers)
    rows = tab.series("small")[::-1]
    means = [r.mean for r in rows]
    v.add("small-block sub-sum trends to 0", means, "decreasing to 0", "99% CI", trend_to_zero(means, [r.stderr for r in rows], z))
    return v


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
}

# criteria that accept a worker count
_PARALLEL = {2, 3, 5, 7, 8, 11}


def run_all(overrides: dict | None = None, workers=None, only=None, log=None) -> list:
    """Run every criterion (or those in ``only``); ``overrides`` maps id -> kwargs."""
    overrides = overrides or {}
    out = []
    for k, fn in CRITERIA.items():
        if only is not None and k not in only:
            continue
        kw = dict(overrides.get(k, {}))
        if k in _PARALLEL and workers is not None:
            kw.setdefault("workers", workers)
        v = fn(**kw)
        if log is not None:
            log(v.line())
        out.append(v)
    return out
