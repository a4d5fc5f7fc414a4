"""Scenario configuration: YAML files checked against a JSON schema, then
turned into grid, coefficient, geometry and target objects."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import yaml

from . import expr as _expr
from .geometry import AdmissibleSet, CompactDomain, JordanArc
from .grid import Grid, Mask
from .operator import CoefficientField

TASKS = ("solve", "correct", "runge", "mergelyan", "carleman", "validate")

_point = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_expr_text = {"type": ["string", "number"]}
_circle = {
    "type": "object",
    "additionalProperties": False,
    "required": ["center", "radius"],
    "properties": {"center": _point, "radius": {"type": "number", "exclusiveMinimum": 0}},
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["task", "grid"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "task": {"enum": list(TASKS)},
        "n": {"type": "integer", "minimum": 1, "maximum": 8},
        "B1": _expr_text,
        "B2": _expr_text,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["half_width", "N"],
            "properties": {
                "center": _point,
                "half_width": {"type": "number", "exclusiveMinimum": 0},
                "N": {"type": "integer", "minimum": 16, "maximum": 2048},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "max_iter": {"type": "integer", "minimum": 1},
                "regularization": {"type": "number", "minimum": 0},
            },
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "domains": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "circle": _circle,
                            "annulus": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["center", "inner", "outer"],
                                "properties": {
                                    "center": _point,
                                    "inner": {"type": "number", "exclusiveMinimum": 0},
                                    "outer": {"type": "number", "exclusiveMinimum": 0},
                                },
                            },
                            "points": {"type": "array", "items": _point, "minItems": 3},
                            "holes": {
                                "type": "array",
                                "items": {"type": "array", "items": _point, "minItems": 3},
                            },
                        },
                        "oneOf": [
                            {"required": ["circle"]},
                            {"required": ["annulus"]},
                            {"required": ["points"]},
                        ],
                    },
                },
                "arcs": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["points"],
                        "properties": {
                            "points": {"type": "array", "items": _point, "minItems": 2},
                            "closed": {"type": "boolean"},
                        },
                    },
                },
                "ambient": _circle,
                "min_angle": {"type": "number", "exclusiveMinimum": 0, "maximum": 90},
            },
        },
        "target": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "f": _expr_text,
                "arcs": {"type": "array", "items": _expr_text},
            },
        },
        "epsilon": _expr_text,
        "basis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "degree": {"type": "integer", "minimum": 0, "maximum": 40},
                "center": _point,
            },
        },
        "carleman": {
            "type": "object",
            "additionalProperties": False,
            "required": ["m_max"],
            "properties": {"m_max": {"type": "integer", "minimum": 1, "maximum": 6}},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "heatmaps": {"type": "boolean"}},
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}


class ConfigError(ValueError):
    """A configuration problem located by its key path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path
        self.message = message


def _key_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _c(p) -> complex:
    return complex(p[0], p[1])


def _parse(path: str, text, shape=None) -> _expr.Expr:
    try:
        e = _expr.parse(str(text))
    except _expr.ParseError as err:
        raise ConfigError(path, str(err)) from None
    if shape is not None and _expr.shape_of(e) not in shape:
        raise ConfigError(path, f"expression has shape {_expr.shape_of(e)}, expected one of {sorted(shape)}")
    return e


@dataclass
class ScenarioConfig:
    raw: dict
    source: Path | None
    name: str
    task: str
    n: int
    grid: Grid
    coeff: CoefficientField
    tol: float = 1e-8
    max_iter: int = 500
    regularization: float = 1e-10
    domains: list = field(default_factory=list)
    arcs: list = field(default_factory=list)
    ambient: Mask | None = None
    min_angle: float = 15.0
    f: _expr.Expr | None = None
    f_arcs: list | None = None
    epsilon: _expr.Expr | None = None
    degree: int = 12
    basis_center: complex | None = None
    m_max: int = 2
    out_dir: str | None = None
    heatmaps: bool = True
    seed: int = 0

    def admissible_set(self) -> AdmissibleSet:
        return AdmissibleSet(self.domains, self.arcs, self.grid, self.ambient, self.min_angle)


def validate_dict(raw) -> None:
    if not isinstance(raw, dict):
        raise ConfigError("", "configuration must be a mapping of keys to values")
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(raw), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(_key_path(e.absolute_path), e.message)


def build(raw: dict, source: Path | None = None) -> ScenarioConfig:
    validate_dict(raw)
    n = int(raw.get("n", 1))
    g = raw["grid"]
    N = g["N"]
    if N & (N - 1):
        raise ConfigError("grid.N", f"{N} is not a power of two")
    grid = Grid(_c(g.get("center", [0, 0])), g["half_width"], N)
    mshape = {(), (n, n)}
    B1 = _parse("B1", raw.get("B1", 0), mshape)
    B2 = _parse("B2", raw.get("B2", 0), mshape)
    try:
        coeff = CoefficientField(n, B1, B2)
        coeff.sampled(grid)
    except (ValueError, ArithmeticError) as err:
        raise ConfigError("B1/B2", str(err)) from None
    task = raw["task"]
    cfg = ScenarioConfig(
        raw=raw,
        source=source,
        name=raw.get("name", source.stem if source else "scenario"),
        task=task,
        n=n,
        grid=grid,
        coeff=coeff,
    )
    s = raw.get("solver", {})
    cfg.tol = s.get("tol", cfg.tol)
    cfg.max_iter = s.get("max_iter", cfg.max_iter)
    cfg.regularization = s.get("regularization", cfg.regularization)

    geo = raw.get("geometry", {})
    for k, d in enumerate(geo.get("domains", [])):
        path = f"geometry.domains[{k}]"
        try:
            if "circle" in d:
                cfg.domains.append(CompactDomain.circle(_c(d["circle"]["center"]), d["circle"]["radius"]))
            elif "annulus" in d:
                a = d["annulus"]
                cfg.domains.append(CompactDomain.annulus(_c(a["center"]), a["inner"], a["outer"]))
            else:
                holes = [[_c(p) for p in h] for h in d.get("holes", [])]
                cfg.domains.append(CompactDomain([_c(p) for p in d["points"]], holes=holes))
        except ValueError as err:
            raise ConfigError(path, str(err)) from None
    for k, a in enumerate(geo.get("arcs", [])):
        try:
            cfg.arcs.append(JordanArc([_c(p) for p in a["points"]], closed=a.get("closed", False)))
        except ValueError as err:
            raise ConfigError(f"geometry.arcs[{k}]", str(err)) from None
    if "ambient" in geo:
        amb = geo["ambient"]
        cfg.ambient = Mask.disk(grid, _c(amb["center"]), amb["radius"])
    cfg.min_angle = geo.get("min_angle", cfg.min_angle)

    fshape = {()} if n == 1 else {(), (n,)}
    tgt = raw.get("target", {})
    if "f" in tgt:
        cfg.f = _parse("target.f", tgt["f"], fshape)
    if "arcs" in tgt:
        if len(tgt["arcs"]) != len(cfg.arcs):
            raise ConfigError("target.arcs", f"{len(tgt['arcs'])} entries for {len(cfg.arcs)} arcs")
        cfg.f_arcs = [_parse(f"target.arcs[{k}]", t, fshape) for k, t in enumerate(tgt["arcs"])]
    if "epsilon" in raw:
        cfg.epsilon = _parse("epsilon", raw["epsilon"], {()})
    b = raw.get("basis", {})
    cfg.degree = b.get("degree", cfg.degree)
    if "center" in b:
        cfg.basis_center = _c(b["center"])
    cfg.m_max = raw.get("carleman", {}).get("m_max", cfg.m_max)
    out = raw.get("output", {})
    cfg.out_dir = out.get("dir")
    cfg.heatmaps = out.get("heatmaps", True)
    cfg.seed = raw.get("seed", 0)
    _task_checks(cfg)
    return cfg


def _task_checks(cfg: ScenarioConfig):
    t = cfg.task
    if t in ("solve", "correct", "runge", "mergelyan", "carleman") and cfg.f is None:
        raise ConfigError("target.f", f"task {t!r} needs a target expression")
    if t in ("correct", "runge") and not cfg.domains:
        raise ConfigError("geometry.domains", f"task {t!r} needs at least one domain")
    if t == "mergelyan" and not (cfg.domains or cfg.arcs):
        raise ConfigError("geometry", "task 'mergelyan' needs domains or arcs")
    if t in ("mergelyan", "carleman") and cfg.epsilon is None:
        raise ConfigError("epsilon", f"task {t!r} needs an error budget")
    if t == "carleman":
        if "carleman" not in cfg.raw:
            raise ConfigError("carleman.m_max", "task 'carleman' needs a window size")
        need = cfg.m_max + 4 / 3
        if cfg.grid.half_width < need or abs(cfg.grid.center) > 0:
            raise ConfigError("grid", f"carleman needs a grid centred at 0 with half_width >= {need:.4g}")
    if t == "validate" and not (cfg.domains or cfg.arcs):
        raise ConfigError("geometry", "task 'validate' needs domains or arcs")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError("", f"cannot read {path}: {err.strerror or err}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("", f"YAML syntax error: {err}") from None
    return build(raw, path)
