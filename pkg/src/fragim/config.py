"""Experiment config files: JSON Schema, loading, and line-level diagnostics.

Configs are YAML (JSON is accepted as a subset).  Every error, schema or
semantic, is reported as ``file:line:col: message`` before anything runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import jsonschema
import yaml

from .characteristic import parse_characteristic
from .corpus import CORPUS
from .fragcore import SimulationParams
from .functions import parse_test_function
from .immigration import ImmigrationSchedule, MarkLaw
from .measure import DislocationMeasure, RankedMassVector, malthusian
from .stats import MCParams

KINDS = ("phi", "simulate", "stopline", "characteristic", "immigration", "decay", "spine", "verify")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_grid = {"type": "array", "items": _num, "minItems": 1}
_ratios = {"type": "array", "items": _pos, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fragim experiment config",
    "type": "object",
    "required": ["experiment", "output"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(KINDS)},
        "output": {"type": "string", "minLength": 1, "description": "output directory"},
        "measure": {
            "description": "corpus name or a list of atoms",
            "oneOf": [
                {"enum": sorted(CORPUS)},
                {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["weight", "ratios"],
                        "additionalProperties": False,
                        "properties": {"weight": _pos, "ratios": _ratios},
                    },
                },
            ],
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": _pos,
                "size_floor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "alpha": _num,
                "seed": {"type": "integer", "minimum": 0},
                "max_events": {"type": "integer", "minimum": 1},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "u": _ratios,
                "rate": {"type": "number", "minimum": 0},
                "theta": {"type": "number", "minimum": 0},
                "horizon": {"type": "number", "minimum": 0},
                "mark": {
                    "oneOf": [
                        {"type": "string", "pattern": r"^fixed:\[.*\]$"},
                        {
                            "type": "object",
                            "required": ["atoms"],
                            "additionalProperties": False,
                            "properties": {
                                "atoms": {
                                    "type": "array",
                                    "minItems": 1,
                                    "items": {
                                        "type": "object",
                                        "required": ["weight", "masses"],
                                        "additionalProperties": False,
                                        "properties": {"weight": _pos, "masses": _ratios},
                                    },
                                }
                            },
                        },
                    ]
                },
            },
        },
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"eta": _grid, "t": _grid, "p": _grid, "q": _grid},
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": {"type": "integer", "minimum": 1},
                "base_seed": {"type": "integer", "minimum": 0},
                "batch": {"type": "integer", "minimum": 1},
                "ci_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "bootstrap_n": {"type": "integer", "minimum": 1},
            },
        },
        "test_functions": {"type": "array", "items": {"type": "string"}},
        "characteristics": {"type": "array", "items": {"type": "string"}},
        "beta": {"type": "number", "minimum": 0},
        "decay_floor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "acceptance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "criteria": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1, "maximum": 11},
                    "minItems": 1,
                },
                "overrides": {
                    "type": "object",
                    "propertyNames": {"pattern": "^([1-9]|1[01])$"},
                    "additionalProperties": {"type": "object"},
                },
            },
        },
    },
    "allOf": [
        {"if": {"properties": {"experiment": {"enum": ["simulate", "stopline", "characteristic", "immigration", "decay", "spine"]}}},
         "then": {"required": ["measure"]}},
        {"if": {"properties": {"experiment": {"const": "phi"}}}, "then": {"required": ["measure", "grids"]}},
    ],
}


class ConfigError(ValueError):
    """Raised with a list of ``file:line:col: message`` diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


@dataclass
class Experiment:
    kind: str
    output: str
    raw: dict
    measure: DislocationMeasure | None = None
    sim: SimulationParams = field(default_factory=SimulationParams)
    schedule: ImmigrationSchedule | None = None
    grids: dict = field(default_factory=dict)
    mc: MCParams = field(default_factory=lambda: MCParams(1000))
    bootstrap_n: int = 1000
    test_functions: list = field(default_factory=list)
    characteristics: list = field(default_factory=list)
    beta: float = 0.0
    decay_floor: float | None = None
    criteria: list | None = None
    overrides: dict = field(default_factory=dict)


# --- locating nodes -----------------------------------------------------------


def _node_at(root, path):
    """Walk a composed YAML node along a JSON path; stop at the deepest match."""
    node = root
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    break
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def _where(name, root, path) -> str:
    if root is None:
        return f"{name}:1:1"
    m = _node_at(root, path).start_mark
    return f"{name}:{m.line + 1}:{m.column + 1}"


def _fmt_path(path) -> str:
    return "/".join(str(p) for p in path) or "<root>"


# --- loading ------------------------------------------------------------------


def load_text(text: str, name: str = "<config>") -> Experiment:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        loc = f"{name}:{mark.line + 1}:{mark.column + 1}" if mark else f"{name}:1:1"
        raise ConfigError([f"{loc}: YAML syntax error: {getattr(e, 'problem', e)}"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{name}:1:1: config must be a mapping"])
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errs:
        raise ConfigError(
            [f"{_where(name, root, list(e.absolute_path))}: {_fmt_path(e.absolute_path)}: {e.message}" for e in errs]
        )
    return _build(data, root, name)


def load(path: str) -> Experiment:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError([f"{path}:1:1: cannot read config: {e.strerror}"]) from None
    return load_text(text, path)


def _build(d: dict, root, name: str) -> Experiment:
    diags = []

    def attempt(path, fn):
        try:
            return fn()
        except (ValueError, TypeError, KeyError) as e:
            diags.append(f"{_where(name, root, path)}: {_fmt_path(path)}: {e}")
            return None

    ex = Experiment(kind=d["experiment"], output=d["output"], raw=d)
    if "measure" in d:
        m = d["measure"]
        ex.measure = attempt(["measure"], lambda: CORPUS[m] if isinstance(m, str) else DislocationMeasure.from_atoms(m))
    s = d.get("simulation", {})
    ex.sim = attempt(["simulation"], lambda: SimulationParams(**s)) or SimulationParams()
    if "schedule" in d:
        ex.schedule = attempt(["schedule"], lambda: _schedule(d["schedule"]))
    ex.grids = {k: [float(x) for x in v] for k, v in d.get("grids", {}).items()}
    for k, v in ex.grids.items():
        if k == "eta" and not all(0.0 < x <= 1.0 for x in v):
            diags.append(f"{_where(name, root, ['grids', 'eta'])}: grids/eta: values must lie in (0, 1]")
        if k == "t" and not all(x >= 0 for x in v):
            diags.append(f"{_where(name, root, ['grids', 't'])}: grids/t: values must be non-negative")
        if k == "p" and not all(x > -1 for x in v):
            diags.append(f"{_where(name, root, ['grids', 'p'])}: grids/p: values must exceed -1")
    mc = dict(d.get("mc", {}))
    ex.bootstrap_n = int(mc.pop("bootstrap_n", 1000))
    mc.setdefault("n_paths", 1000)
    ex.mc = attempt(["mc"], lambda: MCParams(**mc)) or MCParams(1)
    for i, spec in enumerate(d.get("test_functions", [])):
        f = attempt(["test_functions", i], lambda: parse_test_function(spec))
        if f is not None:
            ex.test_functions.append(f)
    if ex.measure is not None:
        ps = attempt(["measure"], lambda: malthusian(ex.measure))
        for i, spec in enumerate(d.get("characteristics", [])):
            c = attempt(["characteristics", i], lambda: parse_characteristic(spec, ps))
            if c is not None:
                ex.characteristics.append(c)
    ex.beta = float(d.get("beta", 0.0))
    ex.decay_floor = d.get("decay_floor")
    acc = d.get("acceptance", {})
    ex.criteria = acc.get("criteria")
    ex.overrides = {int(k): v for k, v in acc.get("overrides", {}).items()}
    diags.extend(_requirements(ex, root, name))
    if diags:
        raise ConfigError(diags)
    return ex


def _schedule(s: dict) -> ImmigrationSchedule:
    mark = s.get("mark", "fixed:[1]")
    if isinstance(mark, str):
        masses = yaml.safe_load(mark[len("fixed:"):])
        if not isinstance(masses, list) or not masses:
            raise ValueError("fixed mark needs a non-empty list of masses")
        law = MarkLaw.fixed([float(x) for x in masses])
    else:
        law = MarkLaw.from_atoms(mark["atoms"])
    return ImmigrationSchedule(
        initial_config=RankedMassVector.ranked(s.get("u", [1.0])),
        rate=float(s.get("rate", 0.0)),
        marks=law,
        theta=float(s.get("theta", 0.0)),
        horizon=float(s.get("horizon", 0.0)),
    )


_NEEDS = {
    "phi": ("p",),
    "simulate": ("p", "t"),
    "stopline": ("eta",),
    "characteristic": ("eta",),
    "immigration": ("eta",),
    "decay": ("t",),
    "spine": ("p", "q", "t"),
}


def _requirements(ex: Experiment, root, name):
    for g in _NEEDS.get(ex.kind, ()):
        if g not in ex.grids:
            yield f"{_where(name, root, ['grids'])}: grids: experiment {ex.kind!r} needs a {g!r} grid"
    if ex.kind == "characteristic" and not ex.characteristics and "characteristics" not in ex.raw:
        yield f"{_where(name, root, [])}: experiment 'characteristic' needs a characteristics list"
    if ex.kind == "decay" and "t" in ex.grids and len(set(ex.grids["t"])) < 2:
        yield f"{_where(name, root, ['grids', 't'])}: grids/t: decay needs at least two distinct times"
    if ex.kind == "immigration" and ex.schedule is None and "schedule" not in ex.raw:
        yield f"{_where(name, root, [])}: experiment 'immigration' needs a schedule"
    if ex.schedule is not None and ex.schedule.rate > 0 and not math.isfinite(ex.schedule.horizon):
        yield f"{_where(name, root, ['schedule'])}: schedule: positive rate needs a finite horizon"
