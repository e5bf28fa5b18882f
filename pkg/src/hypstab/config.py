"""Run configuration: a line-oriented ``section.key = value`` document.

Keys may be written fully qualified (``solver.cfl = 0.4``) or under a
``[solver]`` header.  ``#`` starts a comment.  Lists are comma separated;
per-component lists (initial data, custom velocities) are separated by
``;``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import sympy as sp

from .core import CONTROL_MODES, CoefficientSet, Scenario, build_grid, random_smooth_state
from .dissipativity import MODES as DISSIPATION_MODES
from .errors import ConfigError, ValidationError
from .expressions import axis_function, coordinate_symbols, parse_expression, point_function
from .lyapunov import LyapunovTrace

KINDS = ("constant-gradient", "separable", "potential-flow", "custom-coefficients")
TRACE_COLUMNS = ("t", "L", "B", "I", "S", "u_max", "rate_running")


@dataclass
class RunConfig:
    kind: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]
    C_L: float
    T: float
    # scenario details; which ones apply depends on kind
    H: tuple[str, ...] = ()
    phi: str = ""
    anchor: str = "0"
    gradient: tuple[float, ...] = ()
    components: int | None = None
    velocity: str = ""
    coupling: str = ""
    dissipation: str = ""
    initial: str = "random"
    seed: int = 0
    amplitude: float = 0.3
    # control
    mode: str = ""
    theta: float | None = None
    faces: str = "all"
    # solver
    cfl: float = 0.5
    cadence: int = 10
    h_char: float = 1e-3
    weight_tol: float | None = None
    # output
    trace: str = ""
    summary: str = ""
    weights: str = ""
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    @property
    def dim(self) -> int:
        return len(self.cells)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


# key -> (section, parser)
def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _strs(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(";") if x.strip())


def _opt_float(v: str) -> float | None:
    return None if v.strip().lower() in ("", "none", "default") else float(v)


def _opt_int(v: str) -> int | None:
    return None if v.strip().lower() in ("", "none", "default") else int(v)


SCHEMA: dict[str, tuple[str, object]] = {
    "kind": ("scenario", str),
    "C_L": ("scenario", float),
    "H": ("scenario", _strs),
    "phi": ("scenario", str),
    "anchor": ("scenario", str),
    "gradient": ("scenario", _floats),
    "components": ("scenario", _opt_int),
    "velocity": ("scenario", str),
    "coupling": ("scenario", str),
    "dissipation": ("scenario", str),
    "initial": ("scenario", str),
    "seed": ("scenario", int),
    "amplitude": ("scenario", float),
    "lower": ("grid", _floats),
    "upper": ("grid", _floats),
    "cells": ("grid", _ints),
    "mode": ("control", str),
    "theta": ("control", _opt_float),
    "faces": ("control", str),
    "T": ("solver", float),
    "cfl": ("solver", float),
    "cadence": ("solver", int),
    "h_char": ("solver", float),
    "weight_tol": ("solver", _opt_float),
    "trace": ("output", str),
    "summary": ("output", str),
    "weights": ("output", str),
}
SECTIONS = ("scenario", "grid", "control", "solver", "output")
REQUIRED = ("kind", "lower", "upper", "cells", "C_L", "T")
_LOOKUP = {(sec, key.lower()): key for key, (sec, _) in SCHEMA.items()}


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    """Parse and validate a configuration document."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", line=lineno)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]; expected one of {SECTIONS}", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        name, value = (s.strip() for s in line.split("=", 1))
        if "." in name:
            sec, key = name.split(".", 1)
            sec = sec.strip().lower()
        elif section is not None:
            sec, key = section, name
        else:
            raise ConfigError(f"key {name!r} outside any section", line=lineno, key=name)
        full = f"{sec}.{key}"
        canonical = _LOOKUP.get((sec, key.strip().lower()))
        if canonical is None:
            raise ConfigError(f"unknown key {full!r}", line=lineno, key=full)
        if canonical in values:
            raise ConfigError(f"duplicate key {full!r}", line=lineno, key=full)
        try:
            values[canonical] = SCHEMA[canonical][1](value)
        except ValueError:
            raise ConfigError(f"bad value {value!r} for {full!r}", line=lineno, key=full) from None
        lines[canonical] = lineno
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {SCHEMA[key][0]}.{key}", key=key)
    cfg = RunConfig(**values, base_dir=Path(base_dir))
    return validate_config(cfg, lines)


def _range(ok: bool, key: str, msg: str, lines: dict) -> None:
    if not ok:
        full = f"{SCHEMA[key][0]}.{key}"
        raise ConfigError(f"{full}: {msg}", line=lines.get(key), key=full)


def validate_config(cfg: RunConfig, lines: dict | None = None) -> RunConfig:
    """Range checks; fills the mode-dependent defaults."""
    lines = lines or {}
    _range(cfg.kind in KINDS, "kind", f"kind must be one of {KINDS}", lines)
    d = cfg.dim
    _range(d >= 1 and all(m >= 2 for m in cfg.cells), "cells", "need at least 2 cells per axis", lines)
    _range(len(cfg.lower) == d, "lower", f"need {d} entries", lines)
    _range(len(cfg.upper) == d, "upper", f"need {d} entries", lines)
    _range(all(lo < hi for lo, hi in zip(cfg.lower, cfg.upper)), "upper", "upper must exceed lower", lines)
    _range(cfg.C_L > 0 and math.isfinite(cfg.C_L), "C_L", "C_L must be > 0", lines)
    _range(cfg.T > 0 and math.isfinite(cfg.T), "T", "T must be > 0", lines)
    _range(0 < cfg.cfl <= 1, "cfl", "CFL factor must lie in (0, 1]", lines)
    _range(cfg.cadence >= 1, "cadence", "cadence must be >= 1", lines)
    _range(cfg.h_char > 0, "h_char", "h_char must be > 0", lines)
    _range(cfg.weight_tol is None or cfg.weight_tol > 0, "weight_tol", "weight_tol must be > 0", lines)
    _range(cfg.seed >= 0, "seed", "seed must be >= 0", lines)
    _range(cfg.amplitude >= 0, "amplitude", "amplitude must be >= 0", lines)

    if not cfg.mode:
        cfg.mode = "sharp" if cfg.kind == "separable" else "scalar"
    _range(cfg.mode in CONTROL_MODES, "mode", f"mode must be one of {CONTROL_MODES}", lines)
    if cfg.theta is None:
        cfg.theta = 1.0 if cfg.mode == "sharp" else 0.9
    _range(0 < cfg.theta <= 1, "theta", "theta must lie in (0, 1]", lines)
    _range(cfg.mode != "sharp" or cfg.theta == 1.0, "theta", "sharp mode requires theta = 1", lines)

    default_diss = {
        "constant-gradient": "positive-definite",
        "separable": "diagonal-b",
        "potential-flow": "symmetric-eig",
        "custom-coefficients": "general-q",
    }[cfg.kind]
    if not cfg.dissipation:
        cfg.dissipation = default_diss
    _range(cfg.dissipation in DISSIPATION_MODES, "dissipation", f"must be one of {DISSIPATION_MODES}", lines)
    _range(
        cfg.kind == "custom-coefficients" or cfg.dissipation == default_diss,
        "dissipation",
        f"kind {cfg.kind} uses {default_diss}",
        lines,
    )

    if cfg.kind == "separable":
        _range(len(cfg.H) == d, "H", f"need one expression per axis ({d}), separated by ';'", lines)
    elif cfg.kind == "potential-flow":
        _range(bool(cfg.phi.strip()), "phi", "potential-flow needs phi", lines)
    elif cfg.kind == "constant-gradient":
        _range(len(cfg.gradient) == d, "gradient", f"need {d} entries", lines)
        _range(cfg.components is None or cfg.components >= 1, "components", "must be >= 1", lines)
    else:
        _range(bool(cfg.velocity.strip()), "velocity", "custom-coefficients needs velocity", lines)

    for key in ("trace", "summary", "weights"):
        path = getattr(cfg, key)
        if path:
            parent = cfg.resolve(path).parent
            _range(parent.is_dir(), key, f"directory {parent} does not exist", lines)
    return cfg


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], str):
            return "; ".join(v)
        return ", ".join(_fmt(x) for x in v)
    return "none" if v is None else str(v)


def render(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(render(c)) == c``."""
    out = []
    for sec in SECTIONS:
        out.append(f"[{sec}]")
        for key, (s, _) in SCHEMA.items():
            if s != sec:
                continue
            v = getattr(cfg, key)
            if v in ("", ()) and key not in REQUIRED:
                continue
            out.append(f"{key} = {_fmt(v)}")
        out.append("")
    return "\n".join(out)


def fingerprint(cfg: RunConfig) -> str:
    return hashlib.sha256(render(cfg).encode()).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


# -- scenario assembly -----------------------------------------------------


def _expr_fn(text: str, d: int, key: str):
    return point_function(parse_expression(text, d, key), d)


def _initial(cfg: RunConfig, n: int):
    if cfg.initial.strip().lower() == "random":
        return None
    parts = _strs(cfg.initial)
    if len(parts) != n:
        raise ConfigError(f"initial data needs {n} expressions separated by ';'", key="scenario.initial")
    fns = [_expr_fn(p, cfg.dim, "scenario.initial") for p in parts]
    return lambda x: [f(x) for f in fns]


def build_scenario(cfg: RunConfig) -> Scenario:
    from .hamjac import scenario_constant_gradient, scenario_potential_flow, scenario_separable
    from .scenarios import ControlConfig, scenario_custom

    grid = build_grid(list(zip(cfg.lower, cfg.upper)), cfg.cells)
    d = grid.dim
    faces = cfg.faces.strip()
    if faces.lower() == "none":
        faces = []
    control = ControlConfig(cfg.mode, cfg.theta, faces)

    def init(n):
        spec = _initial(cfg, n)
        return random_smooth_state(grid, n, cfg.seed, cfg.amplitude) if spec is None else spec

    common = dict(control=control, T=cfg.T, cfl=cfg.cfl)
    if cfg.kind == "separable":
        xs = coordinate_symbols(d)
        axes = []
        for k, text in enumerate(cfg.H):
            e = parse_expression(text, d, "scenario.H")
            if e.free_symbols - {xs[k]}:
                raise ConfigError(f"H entry {k + 1} may only depend on x{k + 1}", key="scenario.H")
            axes.append(tuple(axis_function(f, d, k) for f in (e, sp.diff(e, xs[k]), sp.diff(e, xs[k], 2))))
        sc = scenario_separable(axes, grid, cfg.C_L, initial=init(d), **common)
    elif cfg.kind == "potential-flow":
        xs = coordinate_symbols(d)
        phi = parse_expression(cfg.phi, d, "scenario.phi")
        grad = [sp.diff(phi, s) for s in xs]
        hess = [[sp.diff(g, s) for s in xs] for g in grad]
        anchor = _expr_fn(cfg.anchor, d, "scenario.anchor")
        sc = scenario_potential_flow(
            point_function(grad, d), grid, cfg.C_L, hess_phi=point_function(hess, d),
            anchor=anchor, initial=init(d), h_char=cfg.h_char, **common,
        )
    elif cfg.kind == "constant-gradient":
        n = cfg.components or d
        sc = scenario_constant_gradient(cfg.gradient, grid, cfg.C_L, n=n, initial=init(n), **common)
    else:
        rows = _strs(cfg.velocity)
        n = len(rows)
        vel = [[parse_expression(c, d, "scenario.velocity") for c in r.split(",")] for r in rows]
        if any(len(r) != d for r in vel):
            raise ConfigError(f"each velocity row needs {d} entries", key="scenario.velocity")
        if cfg.coupling.strip():
            brows = _strs(cfg.coupling)
            B = [[parse_expression(c, d, "scenario.coupling") for c in r.split(",")] for r in brows]
            if len(B) != n or any(len(r) != n for r in B):
                raise ConfigError(f"coupling must be {n} x {n}", key="scenario.coupling")
        else:
            B = [[sp.Integer(0)] * n for _ in range(n)]
        xs = coordinate_symbols(d)
        div = [sum(sp.diff(vel[i][k], xs[k]) for k in range(d)) for i in range(n)]
        coeffs = CoefficientSet.from_functions(
            grid, point_function(vel, d), point_function(B, d), point_function(div, d)
        )
        sc = scenario_custom(
            coeffs, cfg.C_L, dissipation_mode=cfg.dissipation, anchor=_expr_fn(cfg.anchor, d, "scenario.anchor"),
            initial=init(n), h_char=cfg.h_char, seed=cfg.seed, **common,
        )
    if cfg.weight_tol is not None:
        sc.weights.tol = cfg.weight_tol
    sc.meta["config"] = cfg
    return sc


# -- trace CSV -------------------------------------------------------------


def write_trace(path, trace: LyapunovTrace, fp: str = "") -> None:
    """Fixed column order, 17 significant digits, ``# scenario=<hex>`` comment."""
    rate = trace.rate_running()
    buf = io.StringIO()
    buf.write(f"# scenario={fp or trace.fingerprint}\n")
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    cols = [trace.array(c) for c in TRACE_COLUMNS[:-1]] + [rate]
    for row in zip(*cols):
        buf.write(",".join(format(float(v), ".17g") for v in row) + "\n")
    Path(path).write_text(buf.getvalue())


def read_trace(path) -> LyapunovTrace:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    fp = ""
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            if line.startswith("# scenario="):
                fp = line.split("=", 1)[1].strip()
            continue
        if line.strip():
            body.append(line)
    if not body:
        raise ValidationError(f"{path}: empty trace")
    rows = list(csv.reader(body))
    if tuple(c.strip() for c in rows[0]) != TRACE_COLUMNS:
        raise ValidationError(f"{path}: header must be {','.join(TRACE_COLUMNS)}")
    if len(rows) < 2:
        raise ValidationError(f"{path}: empty trace")
    trace = LyapunovTrace(fp)
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != len(TRACE_COLUMNS):
            raise ValidationError(f"{path}: row {k} has {len(row)} fields")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise ValidationError(f"{path}: non-numeric entry in row {k}") from None
        trace.append(*vals[:6])
    return trace
