"""``fragim`` command line: run, verify, schema.

Exit codes: 0 success, 1 an acceptance criterion failed, 2 bad config.
All outputs are rendered in memory first and written only once the whole
experiment has finished, so a failing run leaves no partial files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
from importlib import resources

import numpy as np

from . import __version__, acceptance
from .config import SCHEMA, ConfigError, Experiment, load
from .experiments import characteristic_table, immigration_table, lambda_table, martingale_table, mi_table
from .fragcore import SimulationParams, simulate, write_event_log
from .functions import TestFunction
from .immigration import (
    ImmigrationSchedule,
    adaptive_largest_blocks,
    immigrant_empirical,
    sample_immigration,
    sample_many,
    write_composite_csv,
)
from .measure import malthusian, phi, phi_prime, structural_constants
from .spine import simulate_spine, tilted_moment_check, write_spine_csv
from .stats import SummaryRow, SummaryTable, default_workers, slope_regression, summarize, z_value
from .stopline import stop_at, write_stopped_csv

log = logging.getLogger("fragim")

SHIPPED_ACCEPTANCE = "acceptance.yaml"


def _render(writer, obj) -> str:
    buf = io.StringIO()
    writer(obj, buf)
    return buf.getvalue()


def _table(tab: SummaryTable) -> str:
    buf = io.StringIO()
    tab.write_csv(buf)
    return buf.getvalue()


# --- experiment kinds ---------------------------------------------------------


def _phi(ex: Experiment, workers):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "phi", "phi_prime"])
    for p in ex.grids["p"]:
        w.writerow([repr(p), repr(phi(ex.measure, p)), repr(phi_prime(ex.measure, p))])
    return {"phi.csv": buf.getvalue()}, True


def _simulate(ex: Experiment, workers):
    floor = ex.raw.get("simulation", {}).get("size_floor", 1e-15)
    tab = martingale_table(ex.measure, ex.grids["p"], ex.grids["t"], ex.mc, size_floor=floor, workers=workers)
    path = simulate(ex.measure, ex.sim.replace(horizon=max(ex.grids["t"]), size_floor=floor))
    return {"summary.csv": _table(tab), "events.csv": _render(write_event_log, path)}, True


def _stopline(ex: Experiment, workers):
    etas = ex.grids["eta"]
    tab = lambda_table(ex.measure, etas, ex.mc, fs=ex.test_functions, workers=workers)
    path = simulate(ex.measure, SimulationParams(seed=ex.sim.seed, size_floor=min(etas), alpha=ex.sim.alpha))
    stops = [stop_at(path, e) for e in etas]
    return {"summary.csv": _table(tab), "stopped.csv": _render(write_stopped_csv, stops)}, True


def _characteristic(ex: Experiment, workers):
    tab = characteristic_table(ex.measure, ex.characteristics, ex.grids["eta"], ex.mc, beta=ex.beta, workers=workers)
    return {"summary.csv": _table(tab)}, True


def _immigration(ex: Experiment, workers):
    sched = ex.schedule
    tab = immigration_table(sched, ex.measure, ex.grids["eta"], ex.mc, fs=ex.test_functions, workers=workers)
    if "p" in ex.grids and "t" in ex.grids:
        tab.extend(mi_table(sched, ex.measure, ex.grids["p"], ex.grids["t"], ex.mc, workers=workers))
    ps = malthusian(ex.measure)
    one = TestFunction.constant(1.0)
    cp = sample_immigration(sched, ex.sim.seed, ex.measure)
    rows = [
        (ex.sim.seed, im.j, eta, immigrant_empirical(im, one, eta, ps))
        for eta in ex.grids["eta"]
        for im in cp.immigrants
    ]
    return {"summary.csv": _table(tab), "composite.csv": _render(write_composite_csv, rows)}, True


def _decay(ex: Experiment, workers):
    sched = ex.schedule or ImmigrationSchedule()
    grid = np.array(sorted(ex.grids["t"]))
    floor = ex.decay_floor or math.exp(-structural_constants(ex.measure).phi_prime_at_bar * grid[-1])
    cps = sample_many(sched, ex.measure, ex.mc.n_paths, ex.mc.base_seed)
    lb = adaptive_largest_blocks(cps, grid, floor)
    y = -np.log(lb.size)
    tab = SummaryTable()
    for i, t in enumerate(grid):
        tab.add(summarize("neg_log_lambda1", t, y[:, i], ex.mc.ci_level), y[:, i])
    t = np.broadcast_to(grid, y.shape).ravel()
    g = np.broadcast_to(np.arange(len(cps))[:, None], y.shape).ravel()
    slope, (lo, hi) = slope_regression(t, y.ravel(), g, ex.bootstrap_n, ex.mc.ci_level, ex.mc.base_seed)
    tab.add(SummaryRow("decay_slope", math.nan, slope, math.nan, lo, hi, len(cps)))
    ratio = float(np.max(lb.t_immigrate / grid))
    tab.add(SummaryRow("max_tj_over_t", math.nan, ratio, math.nan, math.nan, math.nan, len(cps)))
    return {"summary.csv": _table(tab)}, True


def _spine(ex: Experiment, workers):
    tab = SummaryTable()
    z = z_value(ex.mc.ci_level)
    for p in ex.grids["p"]:
        for q in ex.grids["q"]:
            for t in ex.grids["t"]:
                m, se, target = tilted_moment_check(ex.measure, p, q, t, ex.mc)
                tab.add(SummaryRow(f"spine_moment(p={p:g},q={q:g})", t, m, se, m - z * se, m + z * se, ex.mc.n_paths))
                tab.add(SummaryRow(f"tilted_target(p={p:g},q={q:g})", t, target, math.nan, math.nan, math.nan, 0))
    sp = simulate_spine(ex.measure, ex.grids["p"][0], max(ex.grids["t"]), ex.sim.seed)
    return {"summary.csv": _table(tab), "spine.csv": _render(write_spine_csv, sp)}, True


def _verify(ex: Experiment, workers):
    verdicts = acceptance.run_all(ex.overrides, workers=workers, only=ex.criteria, log=log.info)
    ok = all(v.passed for v in verdicts)
    doc = {"passed": ok, "criteria": [v.to_dict() for v in verdicts]}
    return {"verdict.json": json.dumps(doc, indent=2, sort_keys=True) + "\n"}, ok


RUNNERS = {
    "phi": _phi,
    "simulate": _simulate,
    "stopline": _stopline,
    "characteristic": _characteristic,
    "immigration": _immigration,
    "decay": _decay,
    "spine": _spine,
    "verify": _verify,
}


# --- plumbing -----------------------------------------------------------------


def _manifest(ex: Experiment, outputs: dict, workers: int) -> str:
    import scipy

    doc = {
        "fragim": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
        "experiment": ex.kind,
        "config": ex.raw,
        "seeds": {"simulation": ex.sim.seed, "mc_base_seed": ex.mc.base_seed},
        "workers": workers,
        "outputs": {k: hashlib.sha256(v.encode()).hexdigest() for k, v in sorted(outputs.items())},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write(outdir: str, files: dict) -> None:
    os.makedirs(outdir, exist_ok=True)
    for name in sorted(files):
        with open(os.path.join(outdir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(files[name])


def execute(ex: Experiment, workers: int | None = None) -> int:
    workers = default_workers() if workers is None else workers
    log.info("running %s experiment into %s", ex.kind, ex.output)
    files, ok = RUNNERS[ex.kind](ex, workers)
    files["manifest.json"] = _manifest(ex, files, workers)
    _write(ex.output, files)
    for name in sorted(files):
        log.info("wrote %s", os.path.join(ex.output, name))
    return 0 if ok else 1


def shipped_acceptance_path() -> str:
    return str(resources.files("fragim").joinpath("data", SHIPPED_ACCEPTANCE))


def _load_or_report(path: str):
    try:
        return load(path)
    except ConfigError as e:
        for d in e.diagnostics:
            print(d, file=sys.stderr)
        return None


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fragim", description=__doc__.splitlines()[0])
    ap.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    ap.add_argument("--workers", type=int, default=None, help="worker threads (default: $FRAGIM_WORKERS or 1)")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    p_ver = sub.add_parser("verify", help="run the acceptance criteria")
    p_ver.add_argument("config", nargs="?", default=None, help="acceptance config (default: the shipped one)")
    sub.add_parser("schema", help="print the config JSON Schema")
    args = ap.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.workers is not None and args.workers < 1:
        ap.error("--workers must be positive")

    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2, sort_keys=True))
        return 0
    path = args.config if args.config is not None else shipped_acceptance_path()
    ex = _load_or_report(path)
    if ex is None:
        return 2
    if args.command == "verify" and ex.kind != "verify":
        print(f"{path}:1:1: experiment: 'verify' expects a verify config, got {ex.kind!r}", file=sys.stderr)
        return 2
    try:
        return execute(ex, args.workers)
    except ValueError as e:
        # hypotheses the schema cannot see (e.g. a dissipative measure for the spine)
        print(f"{path}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
