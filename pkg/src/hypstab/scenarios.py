"""Scenario assembly and pre-run validation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .boundary import partition_boundary
from .core import CONTROL_MODES, CoefficientSet, Scenario, StateField, StructuredGrid, materialize, random_smooth_state
from .dissipativity import DissipativityReport, build_dissipation, check_dissipativity
from .errors import DissipativityError, ValidationError, WeightError
from .weights import WeightField, WeightResidual, characteristic_weight_function, weight_residual

logger = logging.getLogger(__name__)


def weight_tolerance(grid: StructuredGrid) -> float:
    """Residual tolerance of the weight equation, ``10 h``."""
    return 10.0 * grid.h


@dataclass
class ControlConfig:
    mode: str = "scalar"
    theta: float | None = None  # None: 1 for sharp, 0.9 otherwise
    faces: Sequence[str] | Mapping[int, Sequence[str]] | str | None = None

    def __post_init__(self):
        if self.mode not in CONTROL_MODES:
            raise ValidationError(f"unknown control mode {self.mode!r}; expected one of {CONTROL_MODES}")
        if self.mode == "sharp" and self.theta not in (None, 1.0):
            raise ValidationError("sharp mode requires theta = 1")
        if self.theta is not None and not 0 < self.theta <= 1:
            raise ValidationError("theta must lie in (0, 1]")

    @property
    def resolved_theta(self) -> float:
        if self.theta is not None:
            return float(self.theta)
        return 1.0 if self.mode == "sharp" else 0.9


def make_initial(grid: StructuredGrid, n: int, initial=None, seed: int = 0) -> StateField:
    """``None`` gives a random smooth state; callables are sampled at cell centres."""
    if initial is None:
        return random_smooth_state(grid, n, seed)
    if isinstance(initial, StateField):
        w = initial.copy()
    elif callable(initial):
        w = StateField(grid, materialize(initial(grid.centers()), grid.shape))
    else:
        w = StateField(grid, np.asarray(initial, dtype=float))
    if w.n != n:
        raise ValidationError(f"initial state has {w.n} components, expected {n}")
    return w


@dataclass
class ValidationReport:
    residuals: list[WeightResidual]
    tolerance: float
    dissipativity: DissipativityReport
    partition_counts: dict = field(default_factory=dict)

    @property
    def weights_ok(self) -> bool:
        return all(r.max_norm <= self.tolerance for r in self.residuals)

    @property
    def passed(self) -> bool:
        return self.weights_ok and self.dissipativity.passed

    def summary(self) -> str:
        worst = max(r.max_norm for r in self.residuals)
        return (
            f"weight residual {worst:.3e} (tol {self.tolerance:.3e}), "
            f"dissipativity margin {self.dissipativity.worst_margin:.3e}"
        )

    def raise_on_failure(self) -> "ValidationReport":
        if not self.weights_ok:
            i = int(np.argmax([r.max_norm for r in self.residuals]))
            raise WeightError(
                f"weight residual of component {i + 1} is {self.residuals[i].max_norm:.3e} "
                f"> tolerance {self.tolerance:.3e}"
            )
        if not self.dissipativity.passed:
            raise DissipativityError(
                f"dissipativity inequality fails at cell {self.dissipativity.worst_cell} "
                f"(margin {self.dissipativity.worst_margin:.3e})"
            )
        return self


def validate_scenario(scenario: Scenario) -> ValidationReport:
    """Weight residuals, the dissipativity certificate and the boundary partition."""
    w = scenario.weights
    tol = w.tol if w.tol is not None else weight_tolerance(scenario.grid)
    residuals = [
        weight_residual(w.mu[i], scenario.coeffs, i, scenario.dissipation[i], scenario.c_l[i])
        for i in range(scenario.n)
    ]
    diss = check_dissipativity(scenario.coeffs.coupling, w.exp, scenario.dissipation)
    counts = scenario.partition.counts() if scenario.partition is not None else {}
    return ValidationReport(residuals, tol, diss, counts)


def scenario_custom(
    coeffs: CoefficientSet,
    c_l: float | Sequence[float],
    *,
    dissipation_mode: str = "general-q",
    anchor=0.0,
    control=None,
    initial=None,
    seed: int = 0,
    T: float = 1.0,
    cfl: float = 0.5,
    h_char: float = 1e-3,
    max_iterations: int = 10,
    name: str = "custom",
) -> Scenario:
    """Arbitrary coefficients with characteristics weights.

    For ``general-q`` the dissipation depends on the weights and vice versa;
    the pair is iterated to a fixed point (at most ``max_iterations``
    sweeps) and the result is certified afterwards.
    """
    from .hamjac import _finish

    grid = coeffs.grid
    n = coeffs.n
    c = np.broadcast_to(np.asarray(c_l, dtype=float), (n,))
    anchors = anchor if isinstance(anchor, (list, tuple)) else [anchor] * n
    choice = build_dissipation(coeffs.coupling, np.ones((n,) + grid.shape), dissipation_mode) \
        if dissipation_mode != "positive-definite" else None
    D = choice.D if choice is not None else np.zeros((n,) + grid.shape)
    weights = None
    for it in range(max_iterations):
        fns = tuple(
            characteristic_weight_function(coeffs, i, D[i], float(c[i]), anchors[i], h_char) for i in range(n)
        )
        x = grid.centers()
        weights = WeightField(
            np.stack([f(x) for f in fns]), c, fns, route="characteristics", tol=weight_tolerance(grid)
        )
        if dissipation_mode not in ("general-q", "positive-definite"):
            break
        choice = build_dissipation(coeffs.coupling, weights.exp, dissipation_mode)
        change = float(np.max(np.abs(choice.D - D)))
        D = choice.D
        logger.debug("general-q sweep %d: max |dD| = %.3e", it, change)
        if change < 1e-8:
            break
    else:
        logger.warning("weight/dissipation iteration did not settle in %d sweeps", max_iterations)
    if dissipation_mode in ("general-q", "positive-definite"):
        # certify the final pair; a stale D is caught here
        cert = check_dissipativity(coeffs.coupling, weights.exp, D)
        if not cert.passed:
            raise DissipativityError(f"fixed point not dissipative (margin {cert.worst_margin:.3e})")
    else:
        build_dissipation(coeffs.coupling, weights.exp, dissipation_mode)
    return _finish(
        grid, coeffs, weights, D, c, control, initial, T, cfl, name, dissipation_mode, {"h_char": h_char}, seed
    )
