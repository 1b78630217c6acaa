"""Batch Monte-Carlo statistics built on the core modules.

Every builder returns a :class:`SummaryTable` computed through
:func:`fragim.stats.run_mc`, with path i seeded by ``base_seed XOR i``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import rng
from .characteristic import Characteristic, forest_count
from .fragcore import forest_martingale, grow_forest
from .functions import TestFunction
from .immigration import ImmigrationSchedule, forest_composite_stopped, mi_martingale, sample_immigration
from .measure import DislocationMeasure, malthusian, phi
from .stats import MCParams, SummaryTable, run_mc
from .stopline import forest_empirical


def _seeds(mc: MCParams, idx) -> np.ndarray:
    return rng.path_seed(mc.base_seed, np.asarray(idx))


def martingale_table(
    nu: DislocationMeasure, p_grid, t_grid, mc: MCParams, size_floor: float = 1e-15, workers=None
) -> SummaryTable:
    """M_t(p) for every p and t: statistic ``M(p=..)``, grid t."""
    t_max = float(max(t_grid))
    ps = [float(p) for p in p_grid]
    phis = [phi(nu, p) for p in ps]

    def batch(idx):
        forest = grow_forest(nu, _seeds(mc, idx), horizons=t_max, floors=size_floor)
        out = {}
        for p, ph in zip(ps, phis):
            for t in t_grid:
                out[(f"M(p={p:.12g})", float(t))] = forest_martingale(forest, p, float(t), ph)
        return out

    return run_mc(batch, mc, workers)


def lambda_table(
    nu: DislocationMeasure, eta_grid, mc: MCParams, fs: Sequence[TestFunction] = (), workers=None
) -> SummaryTable:
    """Lambda_eta(p*) (statistic ``Lambda``) and <rho_eta, f> (``rho_eta[f]``) on an eta grid."""
    ps = malthusian(nu)
    floor = float(min(eta_grid))

    def batch(idx):
        forest = grow_forest(nu, _seeds(mc, idx), floors=floor)
        out = {}
        for eta in eta_grid:
            res = forest_empirical(forest, float(eta), fs, ps)
            out[("Lambda", float(eta))] = res[None]
            for f in fs:
                out[(f"rho_eta[{f.name}]", float(eta))] = res[f]
        return out

    return run_mc(batch, mc, workers)


def characteristic_table(
    nu: DislocationMeasure, phis: Sequence[Characteristic], eta_grid, mc: MCParams, beta: float = 0.0, workers=None
) -> SummaryTable:
    """eta^(1+p*+beta) Z^phi_eta per characteristic: statistic ``Z[name]``."""
    ps = malthusian(nu)
    floor = float(min(eta_grid))

    def batch(idx):
        forest = grow_forest(nu, _seeds(mc, idx), floors=floor)
        out = {}
        for ph in phis:
            for eta in eta_grid:
                e = float(eta)
                out[(f"Z[{ph.name}]", e)] = e ** (1.0 + ps + beta) * forest_count(forest, ph, e)
        return out

    return run_mc(batch, mc, workers)


def _composites(schedule: ImmigrationSchedule, nu, mc: MCParams, idx):
    return [sample_immigration(schedule, int(s), nu) for s in _seeds(mc, idx)]


def immigration_table(
    schedule: ImmigrationSchedule,
    nu: DislocationMeasure,
    eta_grid,
    mc: MCParams,
    fs: Sequence[TestFunction] = (),
    workers=None,
) -> SummaryTable:
    """Composite stopping statistics on an eta grid.

    ``rhoI`` is <rho^I_eta, 1>, ``tail`` the unsplit-immigrant part, ``small``
    the part from stopped blocks below eta^2, ``rhoI[f]`` per test function;
    ``mass_sum`` is sum_j v_j^(1+p*) (grid nan).
    """
    ps = malthusian(nu)

    def batch(idx):
        cps = _composites(schedule, nu, mc, idx)
        out = {"mass_sum": [cp.mass_sum(ps) for cp in cps]}
        for eta in eta_grid:
            e = float(eta)
            res = forest_composite_stopped(cps, e, fs, ps)
            out[("rhoI", e)] = res["total"]
            out[("tail", e)] = res["tail"]
            out[("small", e)] = res["small"]
            for f in fs:
                out[(f"rhoI[{f.name}]", e)] = res[f]
        return out

    return run_mc(batch, mc, workers)


def mi_table(
    schedule: ImmigrationSchedule, nu: DislocationMeasure, p_grid, t_grid, mc: MCParams, workers=None
) -> SummaryTable:
    """M^I_t(p): statistic ``MI(p=..)``, grid t."""

    def batch(idx):
        cps = _composites(schedule, nu, mc, idx)
        out = {}
        for p in p_grid:
            vals = mi_martingale(cps, float(p), t_grid)
            for i, t in enumerate(t_grid):
                out[(f"MI(p={float(p):.12g})", float(t))] = vals[:, i]
        return out

    return run_mc(batch, mc, workers)


def within(mean: float, se: float, target: float, k: float = 3.0, atol: float = 1e-12) -> bool:
    """|mean - target| <= k * se, with ``atol`` absorbing rounding when se is ~0."""
    return abs(mean - target) <= k * (0.0 if math.isnan(se) else se) + atol
