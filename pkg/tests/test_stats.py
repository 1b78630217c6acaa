import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fragim.stats import (
    MCParams,
    Moments,
    SummaryTable,
    decreasing_within_ci,
    nondecreasing_within_ci,
    per_path,
    run_mc,
    slope_regression,
    summarize,
    trend_to_zero,
)
from fragim.experiments import martingale_table
from fragim.corpus import MIXTURE
from fragim import rng


def _noise(indices):
    u = rng.uniform(rng.root_key(rng.path_seed(3, indices)), rng.NOISE)
    return {("u", 0.0): u, ("u2", 1.0): u * u}


def _csv(tab):
    buf = io.StringIO()
    tab.write_csv(buf)
    return buf.getvalue()


def test_constant_statistic():
    tab = run_mc(per_path(lambda i: {"c": 2.5}), MCParams(50, batch=7))
    r = tab.get("c")
    assert (r.mean, r.stderr, r.n) == (2.5, 0.0, 50)


def test_single_path_flagged():
    tab = run_mc(per_path(lambda i: {"c": 1.0}), MCParams(1))
    assert tab.flagged and math.isnan(tab.get("c").stderr)
    assert _csv(tab).splitlines()[1] == "c,,1.0,,,,1"


def test_csv_column_order():
    tab = run_mc(_noise, MCParams(10))
    assert _csv(tab).splitlines()[0] == "statistic,grid,mean,stderr,ci_lo,ci_hi,n"


def test_parallel_equals_serial():
    mc = MCParams(3000, 2, batch=250)
    assert _csv(run_mc(_noise, mc, workers=1)) == _csv(run_mc(_noise, mc, workers=8))


def test_batch_size_irrelevant():
    a = run_mc(_noise, MCParams(1000, 2, batch=1000))
    b = run_mc(_noise, MCParams(1000, 2, batch=37))
    assert _csv(a) == _csv(b)


def test_martingale_table_parallel_serial():
    mc = MCParams(400, 1, batch=50)
    a = martingale_table(MIXTURE, [0.5], [1.0, 2.0], mc, workers=1)
    b = martingale_table(MIXTURE, [0.5], [1.0, 2.0], mc, workers=4)
    assert _csv(a) == _csv(b)


def test_workers_env(monkeypatch):
    from fragim.stats import default_workers

    monkeypatch.setenv("FRAGIM_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("FRAGIM_WORKERS", "0")
    with pytest.raises(ValueError):
        default_workers()


def test_bad_batch_lengths():
    with pytest.raises(ValueError):
        run_mc(lambda idx: {"x": [1.0]}, MCParams(5, batch=5))


def test_slope_exact_line():
    t = np.repeat(np.arange(10.0), 3)
    slope, (lo, hi) = slope_regression(t, 2 * t + 1, np.tile(np.arange(3), 10), bootstrap_n=200)
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert lo == pytest.approx(2.0, abs=1e-12) and hi == pytest.approx(2.0, abs=1e-12)


def test_slope_noiseless_decay():
    rate = 0.2587966320807572
    t = np.linspace(10, 40, 31)
    slope, _ = slope_regression(t, -rate * t, bootstrap_n=0)
    assert slope == pytest.approx(-rate, rel=1e-12)


def test_slope_ci_coverage():
    gen = np.random.default_rng(0)
    t = np.linspace(0, 10, 20)
    hits = 0
    for rep in range(100):
        y = 1.5 * t + gen.normal(0, 1.0, len(t))
        _, (lo, hi) = slope_regression(t, y, bootstrap_n=400, ci_level=0.95, seed=rep)
        hits += lo <= 1.5 <= hi
    assert hits >= 90  # percentile bootstrap undercovers slightly at n = 20


def test_slope_degenerate():
    with pytest.raises(ValueError):
        slope_regression([1.0, 1.0], [0.0, 1.0])


def test_trend_helpers():
    assert decreasing_within_ci([3, 2, 1], [0.1] * 3, 2.58)
    assert not decreasing_within_ci([1, 2, 3], [0.1] * 3, 2.58)
    assert nondecreasing_within_ci([1, 2, 3], [0.1] * 3, 2.58)
    assert trend_to_zero([1.0, 0.3, 0.01], [0.05, 0.02, 0.01], 2.58)
    assert not trend_to_zero([1.0, 0.99, 0.98], [0.01] * 3, 2.58)


# --- properties ------------------------------------------------------------

finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(finite, min_size=2, max_size=60), st.randoms())
def test_order_independence(xs, rand):
    ys = list(xs)
    rand.shuffle(ys)
    a, b = summarize("x", 0.0, xs), summarize("x", 0.0, ys)
    assert (a.mean, a.stderr) == (b.mean, b.stderr)


@given(st.lists(finite, min_size=1, max_size=60), st.integers(0, 60))
def test_merge_matches_single_pass(xs, cut):
    cut = min(cut, len(xs))
    whole = Moments.of(xs)
    merged = Moments.of(xs[:cut]).merge(Moments.of(xs[cut:]))
    assert merged.n == whole.n
    assert merged.mean == pytest.approx(whole.mean, rel=1e-12, abs=1e-9)
    assert merged.m2 == pytest.approx(whole.m2, rel=1e-12, abs=1e-6)


@given(st.lists(finite, min_size=3, max_size=30), st.integers(1, 29), st.integers(1, 29))
def test_merge_associative(xs, i, j):
    i, j = sorted((min(i, len(xs)), min(j, len(xs))))
    a, b, c = Moments.of(xs[:i]), Moments.of(xs[i:j]), Moments.of(xs[j:])
    left, right = a.merge(b).merge(c), a.merge(b.merge(c))
    assert left.mean == pytest.approx(right.mean, rel=1e-12, abs=1e-9)
    assert left.m2 == pytest.approx(right.m2, rel=1e-12, abs=1e-6)
