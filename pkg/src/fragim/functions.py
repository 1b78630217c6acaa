"""Bounded test functions on [0, 1) vanishing on [1, inf)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    """A bounded measurable function f with f = 0 on [1, inf).

    kinds:
      ``constant``  value c on [0, 1)
      ``indicator`` 1 on [a, b) with 0 <= a < b <= 1
      ``power``     t**q on [0, 1), q >= 0
      ``table``     step function: ``values[i]`` on [edges[i], edges[i+1])
      ``sum``       pointwise sum of ``terms``
    """

    __test__ = False  # not a pytest class

    kind: str
    params: tuple = ()
    terms: tuple = field(default=(), repr=False)
    name: str = ""

    def __post_init__(self):
        k, p = self.kind, self.params
        if k == "constant":
            (c,) = p
            if not np.isfinite(c) or c < 0:
                raise ValueError("constant must be finite and non-negative")
        elif k == "indicator":
            a, b = p
            if not 0.0 <= a < b <= 1.0:
                raise ValueError(f"indicator needs 0 <= a < b <= 1, got [{a}, {b})")
        elif k == "power":
            (q,) = p
            if q < 0:
                raise ValueError("power t**q with q < 0 is unbounded on [0, 1)")
        elif k == "table":
            edges, values = p
            edges, values = np.asarray(edges, float), np.asarray(values, float)
            if len(edges) != len(values) + 1 or np.any(np.diff(edges) <= 0):
                raise ValueError("table needs strictly increasing edges, one more than values")
            if edges[0] < 0 or edges[-1] > 1 or np.any(values < 0) or not np.all(np.isfinite(values)):
                raise ValueError("table must live on [0, 1] with finite non-negative values")
        elif k == "sum":
            if not self.terms:
                raise ValueError("sum needs at least one term")
        else:
            raise ValueError(f"unknown test-function kind {k!r}")

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, c: float = 1.0) -> "TestFunction":
        return cls("constant", (float(c),), name=f"const:{c:g}")

    @classmethod
    def indicator(cls, a: float, b: float) -> "TestFunction":
        return cls("indicator", (float(a), float(b)), name=f"ind:[{a:g},{b:g})")

    @classmethod
    def power(cls, q: float) -> "TestFunction":
        return cls("power", (float(q),), name=f"pow:{q:g}")

    @classmethod
    def table(cls, edges, values) -> "TestFunction":
        return cls("table", (tuple(map(float, edges)), tuple(map(float, values))), name="table")

    def __add__(self, other: "TestFunction") -> "TestFunction":
        return TestFunction("sum", (), terms=(self, other), name=f"({self.name}+{other.name})")

    # evaluation ---------------------------------------------------------
    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 0.0) & (t < 1.0)
        k, p = self.kind, self.params
        if k == "constant":
            out = np.where(inside, p[0], 0.0)
        elif k == "indicator":
            out = np.where((t >= p[0]) & (t < p[1]), 1.0, 0.0)
        elif k == "power":
            out = np.where(inside, np.power(np.clip(t, 0.0, 1.0), p[0]), 0.0)
        elif k == "table":
            edges, values = np.asarray(p[0]), np.asarray(p[1])
            idx = np.searchsorted(edges, t, side="right") - 1
            ok = inside & (idx >= 0) & (idx < len(values))
            out = np.where(ok, values[np.clip(idx, 0, len(values) - 1)], 0.0)
        else:
            out = sum(term(t) for term in self.terms)
        return out if out.ndim else float(out)

    @property
    def bound(self) -> float:
        k, p = self.kind, self.params
        if k == "constant":
            return p[0]
        if k == "indicator" or k == "power":
            return 1.0
        if k == "table":
            return float(max(p[1]))
        return sum(term.bound for term in self.terms)

    @property
    def breakpoints(self) -> tuple:
        k, p = self.kind, self.params
        if k == "indicator":
            return tuple(p)
        if k == "table":
            return tuple(p[0])
        if k == "sum":
            return tuple(sorted({b for term in self.terms for b in term.breakpoints}))
        return ()


def parse_test_function(spec: str) -> TestFunction:
    """Parse registry names: ``one``, ``zero``, ``const:c``, ``ind:a,b``, ``pow:q``."""
    spec = spec.strip()
    if spec == "one":
        return TestFunction.constant(1.0)
    if spec == "zero":
        return TestFunction.constant(0.0)
    kind, _, arg = spec.partition(":")
    if kind == "const":
        return TestFunction.constant(float(arg))
    if kind == "ind":
        a, b = (float(x) for x in arg.split(","))
        return TestFunction.indicator(a, b)
    if kind == "pow":
        return TestFunction.power(float(arg))
    raise ValueError(f"unknown test function {spec!r}")
