"""Explicit first-order upwind integration of the closed loop.

One forward-Euler stage per step combines the upwind differences of all
axes and the explicit coupling source.  Ghost layers carry the feedback on
controlled inflow faces, zero on the remaining inflow faces and a copy of the
adjacent cell on outflow faces.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .boundary import (
    CONTROLLED,
    OUTFLOW,
    BoundaryPartition,
    ControlSignal,
    synthesize_control,
    verify_control,
)
from .core import CoefficientSet, Scenario, StateField, StructuredGrid
from .errors import ControlInfeasibleError, InstabilityError, ValidationError
from .lyapunov import LyapunovTrace, lyapunov_value, source_term, transport_rate, volume_term

logger = logging.getLogger(__name__)

BLOWUP = 1e12


@dataclass
class StepReport:
    t: float
    dt: float
    max_abs: np.ndarray
    boundary_term: float
    u_max: float
    cfl: float


def cfl_dt(coeffs: CoefficientSet, grid: StructuredGrid | None = None, cfl_factor: float = 0.5) -> float:
    """Largest stable step: ``cfl / max sum_k |a_i^(k)| / h_k``, capped by ``0.5 / max row sum |B|``."""
    grid = grid or coeffs.grid
    if not 0 < cfl_factor <= 1:
        raise ValidationError("CFL factor must lie in (0, 1]")
    h = np.asarray(grid.spacing).reshape((1, -1) + (1,) * grid.dim)
    speed = float(np.max(np.sum(np.abs(coeffs.velocity) / h, axis=1)))
    if not speed > 0:
        raise ValidationError("all velocities vanish")
    dt = cfl_factor / speed
    rowsum = float(np.max(np.sum(np.abs(coeffs.coupling), axis=1))) if coeffs.coupling.size else 0.0
    if rowsum > 0:
        dt = min(dt, 0.5 / rowsum)
    return dt


def apply_boundary(w: StateField, part: BoundaryPartition, u: ControlSignal) -> dict[str, np.ndarray]:
    """Ghost values per side, shape ``(n, *face_shape)``."""
    if u.t != w.t:
        raise ValidationError(f"control signal is stale (t={u.t}, state at t={w.t})")
    ghosts = {}
    for s in part.sides:
        interior = s.trace(w.values)
        g = np.zeros_like(interior)
        out = s.klass == OUTFLOW
        g[out] = interior[out]
        ctrl = s.klass == CONTROLLED
        g[ctrl] = u.faces[s.label][ctrl]
        ghosts[s.label] = g
    return ghosts


def step(w: StateField, coeffs: CoefficientSet, ghosts: dict[str, np.ndarray], dt: float) -> StateField:
    """Advance one forward-Euler step of size ``dt``."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    grid = w.grid
    v = w.values
    rhs = np.einsum("ij...,j...->i...", coeffs.coupling, v)
    for k in range(grid.dim):
        lo = ghosts[f"x{k + 1}-"]
        hi = ghosts[f"x{k + 1}+"]
        padded = np.concatenate([lo, v, hi], axis=1 + k)
        diff = np.diff(padded, axis=1 + k) / grid.spacing[k]
        m = grid.cells[k]
        back = np.take(diff, np.arange(m), axis=1 + k)
        fwd = np.take(diff, np.arange(1, m + 1), axis=1 + k)
        a = coeffs.velocity[:, k]
        rhs += np.maximum(a, 0.0) * back + np.minimum(a, 0.0) * fwd
    new = v - dt * rhs
    if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > BLOWUP:
        raise InstabilityError(
            f"solution blew up at t={w.t + dt:.6g}",
            StepReport(w.t + dt, dt, np.max(np.abs(v), axis=tuple(range(1, v.ndim))), float("nan"), float("nan"), float("nan")),
        )
    return StateField(grid, new, w.t + dt)


@dataclass
class RunResult:
    trace: LyapunovTrace
    state: StateField
    steps: int
    dt: float
    min_boundary_ratio: float = np.inf  # min over steps of B / (L + 1)
    max_abs_boundary_ratio: float = 0.0  # max over steps of |B| / (L + 1)
    control_failures: int = 0
    reports: list = field(default_factory=list)


def run(
    scenario: Scenario,
    cadence: int = 10,
    validate: bool = True,
    keep_reports: bool = False,
    fingerprint: str = "",
) -> RunResult:
    """Closed loop: control, verify, fill ghosts, step; sample every ``cadence`` steps.

    The initial and the final state are always sampled.  A failed control
    verification aborts with :class:`ControlInfeasibleError`.
    """
    if validate:
        from .scenarios import validate_scenario

        validate_scenario(scenario).raise_on_failure()
    if cadence < 1:
        raise ValidationError("cadence must be >= 1")
    coeffs, part, weights = scenario.coeffs, scenario.partition, scenario.weights
    mu = weights.mu
    rate = transport_rate(coeffs, mu)
    dt = cfl_dt(coeffs, scenario.grid, scenario.cfl)
    T = scenario.T
    w = scenario.initial.copy()
    w.t = 0.0
    trace = LyapunovTrace(fingerprint)
    result = RunResult(trace, w, 0, dt)
    n_steps = 0
    while True:
        u = synthesize_control(w, part, scenario.control_mode, scenario.theta)
        margin = verify_control(u, w, part)
        L = lyapunov_value(w, mu)
        if not margin.passed:
            result.control_failures += 1
            raise ControlInfeasibleError(
                f"control inequality violated at t={w.t:.6g}: injected {margin.lhs:.6g} > outflow {margin.rhs:.6g}"
            )
        ratio = margin.margin / (L + 1.0)
        result.min_boundary_ratio = min(result.min_boundary_ratio, ratio)
        result.max_abs_boundary_ratio = max(result.max_abs_boundary_ratio, abs(ratio))
        done = w.t >= T * (1 - 1e-12)
        if n_steps % cadence == 0 or done:
            trace.append(
                w.t, L, margin.margin, volume_term(w, coeffs, mu, rate), source_term(w, coeffs.coupling, mu), u.max_abs
            )
        if done:
            break
        ghosts = apply_boundary(w, part, u)
        d = min(dt, T - w.t)
        w = step(w, coeffs, ghosts, d)
        n_steps += 1
        if keep_reports:
            result.reports.append(
                StepReport(w.t, d, np.max(np.abs(w.values), axis=tuple(range(1, w.values.ndim))), margin.margin, u.max_abs, d / dt * scenario.cfl)
            )
    result.state = w
    result.steps = n_steps
    logger.info("run finished: %d steps, L(T)/L(0) = %.6g", n_steps, trace.L[-1] / trace.L[0] if trace.L[0] else 0.0)
    return result
