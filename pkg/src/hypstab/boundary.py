"""Boundary partition and feedback synthesis.

For every component the box faces split into outflow (``a_i . n >= 0``),
controlled inflow and homogeneous inflow.  Controls are chosen so that

    -sum_i int_{C_i} u_i^2 (a_i . n) exp(mu_i)  <=  theta * sum_i int_{out_i} w_i^2 (a_i . n) exp(mu_i)

which keeps the boundary contribution to the Lyapunov derivative
non-negative.  ``theta = 1`` turns the inequality into an equality.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import CONTROL_MODES, BoundarySide, CoefficientSet, StateField, StructuredGrid
from .errors import ControlInfeasibleError, NoControlAuthorityError, ValidationError

logger = logging.getLogger(__name__)

OUTFLOW, CONTROLLED, ZERO = 0, 1, 2


@dataclass(frozen=True)
class SideData:
    side: BoundarySide
    flux: np.ndarray  # (n, *face_shape): a_i . n at face centres
    weight: np.ndarray  # (n, *face_shape): exp(mu_i) at face centres
    klass: np.ndarray  # (n, *face_shape)

    @property
    def label(self) -> str:
        return self.side.label

    def trace(self, values: np.ndarray) -> np.ndarray:
        """Adjacent interior cell values, the upwinded boundary trace."""
        return np.take(values, [self.side.index], axis=1 + self.side.axis)

    def opposite_trace(self, values: np.ndarray) -> np.ndarray:
        return np.take(values, [0 if self.side.high else -1], axis=1 + self.side.axis)

    def measure(self, klass: int) -> np.ndarray:
        """``(a_i . n) exp(mu_i) * area`` on faces of the given class, zero elsewhere."""
        return np.where(self.klass == klass, self.flux * self.weight * self.side.area, 0.0)


@dataclass(frozen=True)
class BoundaryPartition:
    grid: StructuredGrid
    n: int
    sides: tuple[SideData, ...]

    def side(self, label: str) -> SideData:
        for s in self.sides:
            if s.label == label:
                return s
        raise KeyError(label)

    def counts(self) -> dict[str, np.ndarray]:
        """Faces per class and component."""
        out = {}
        for name, klass in (("outflow", OUTFLOW), ("controlled", CONTROLLED), ("zero", ZERO)):
            out[name] = np.array(
                [sum(int(np.sum(s.klass[i] == klass)) for s in self.sides) for i in range(self.n)]
            )
        return out

    def controlled_measure(self) -> np.ndarray:
        """Per component ``int_{C_i} (a_i . n) exp(mu_i)`` (non-positive)."""
        return np.array(
            [sum(float(np.sum(s.measure(CONTROLLED)[i])) for s in self.sides) for i in range(self.n)]
        )


def _resolve_selection(control_faces, labels: list[str], n: int) -> list[set[str] | None]:
    if control_faces is None or control_faces == "all":
        return [None] * n
    if isinstance(control_faces, str):
        control_faces = [c.strip() for c in control_faces.split(",") if c.strip()]
    if isinstance(control_faces, Mapping):
        sel = []
        for i in range(n):
            chosen = control_faces.get(i, [])
            sel.append(set([chosen] if isinstance(chosen, str) else chosen))
    else:
        sel = [set(control_faces)] * n
    for s in sel:
        unknown = s - set(labels)
        if unknown:
            raise ValidationError(f"unknown boundary side(s) {sorted(unknown)}; expected {labels}")
    return sel


def partition_boundary(
    coeffs: CoefficientSet,
    weights,
    grid: StructuredGrid | None = None,
    control_faces: Sequence[str] | Mapping[int, Sequence[str]] | str | None = None,
) -> BoundaryPartition:
    """Classify every boundary face for every component.

    ``control_faces`` selects the sides (labels ``"x1-"``, ``"x2+"``, ...)
    whose inflow faces carry feedback; ``None`` controls all inflow faces.
    A sequence applies to every component, a mapping ``{component: sides}``
    selects per component.  Inflow faces not selected receive zero data.
    Selecting a side with no inflow face is rejected.
    """
    grid = grid or coeffs.grid
    n = coeffs.n
    sides = list(grid.sides())
    labels = [s.label for s in sides]
    selection = _resolve_selection(control_faces, labels, n)
    shared = not isinstance(control_faces, Mapping)

    out = []
    inflow_any: dict[str, list[bool]] = {}
    for side in sides:
        vel = coeffs.velocity_at(side.centers)  # (n, d, *face_shape)
        flux = np.tensordot(side.normal, vel, axes=([0], [1]))
        weight = np.exp(weights.face_values(side))
        klass = np.full(flux.shape, OUTFLOW, dtype=np.int8)
        inflow = flux < 0
        flags = []
        for i in range(n):
            chosen = selection[i] is None or side.label in selection[i]
            klass[i][inflow[i]] = CONTROLLED if chosen else ZERO
            flags.append(bool(inflow[i].any()))
            if selection[i] is not None and side.label in selection[i] and not inflow[i].any() and not shared:
                raise ValidationError(
                    f"side {side.label} is outflow for component {i + 1}; control there is not admissible"
                )
        inflow_any[side.label] = flags
        out.append(SideData(side, flux, weight, klass))

    if shared and control_faces not in (None, "all"):
        for label in selection[0] or ():
            if not any(inflow_any[label]):
                raise ValidationError(
                    f"side {label} is outflow for every component; control there is not admissible"
                )
    return BoundaryPartition(grid, n, tuple(out))


def outflow_functional(w: StateField, part: BoundaryPartition) -> float:
    """``sum_i int_{out_i} w_i^2 (a_i . n) exp(mu_i)`` by midpoint quadrature."""
    total = 0.0
    for s in part.sides:
        total += float(np.sum(s.trace(w.values) ** 2 * s.measure(OUTFLOW)))
    return total


def control_gain(part: BoundaryPartition) -> float:
    """``G = -(sum_i int_{C_i} (a_i . n) exp(mu_i))^{-1}``."""
    measure = float(np.sum(part.controlled_measure()))
    if not measure < 0:
        raise NoControlAuthorityError("controlled inflow set is empty; no control authority")
    return -1.0 / measure


@dataclass
class ControlSignal:
    """Boundary data for the controlled faces at time ``t``.

    ``faces`` maps side labels to arrays ``(n, *face_shape)``; entries off the
    controlled set are zero.  ``scalar`` is set for the single-value modes.
    """

    mode: str
    faces: dict[str, np.ndarray]
    t: float
    scalar: float | None = None
    theta: float = 1.0
    budget: float = 0.0

    @property
    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.faces.values()), default=0.0)


def _fill(part: BoundaryPartition, per_component: np.ndarray) -> dict[str, np.ndarray]:
    faces = {}
    for s in part.sides:
        vals = np.where(s.klass == CONTROLLED, per_component.reshape((-1,) + (1,) * (s.klass.ndim - 1)), 0.0)
        faces[s.label] = vals
    return faces


def synthesize_control(
    w: StateField, part: BoundaryPartition, mode: str = "scalar", theta: float = 0.9
) -> ControlSignal:
    """Feedback from the current outflow trace.

    scalar / sharp
        One value for all components and faces, ``u^2 = theta * G * F`` with
        ``F`` the outflow functional and ``G`` from :func:`control_gain`.
        ``sharp`` forces ``theta = 1``.
    uniform
        One value per component, ``u_i^2 = theta * F_i / |int_{C_i} ...|``;
        outflow of components without controls is shared out in proportion
        to the controlled measures.
    spatial
        Each controlled face mirrors the state in the opposite boundary cell
        of its grid line, scaled so the aggregate budget is ``theta * F``.
    """
    if mode not in CONTROL_MODES:
        raise ValidationError(f"unknown control mode {mode!r}")
    if mode == "sharp":
        theta = 1.0
    if not 0 < theta <= 1:
        raise ValidationError("theta must lie in (0, 1]")
    F = outflow_functional(w, part)
    budget = theta * F
    omega = -part.controlled_measure()  # >= 0 per component
    zero = np.zeros(part.n)

    if not np.sum(omega) > 0:
        if mode == "sharp" and F > 1e-300:
            raise NoControlAuthorityError(
                "sharp control requires a non-empty controlled set while the outflow is non-zero"
            )
        return ControlSignal(mode, _fill(part, zero), w.t, 0.0 if mode in ("scalar", "sharp") else None, theta, budget)

    if mode in ("scalar", "sharp"):
        radicand = theta * control_gain(part) * F
        if radicand < 0:
            raise ControlInfeasibleError(f"negative control radicand {radicand}")
        u = np.sqrt(radicand)
        return ControlSignal(mode, _fill(part, np.full(part.n, u)), w.t, float(u), theta, budget)

    if mode == "uniform":
        Fi = np.array(
            [sum(float(np.sum(s.trace(w.values)[i] ** 2 * s.measure(OUTFLOW)[i])) for s in part.sides) for i in range(part.n)]
        )
        live = omega > 0
        orphan = float(np.sum(Fi[~live]))
        share = np.where(live, Fi + orphan * omega / np.sum(omega), 0.0)
        u2 = np.where(live, theta * share / np.where(live, omega, 1.0), 0.0)
        return ControlSignal(mode, _fill(part, np.sqrt(u2)), w.t, None, theta, budget)

    # spatial: mirror feedback, rescaled to the budget
    faces = {}
    denom = 0.0
    for s in part.sides:
        prof = np.where(s.klass == CONTROLLED, s.opposite_trace(w.values), 0.0)
        faces[s.label] = prof
        denom += float(np.sum(prof**2 * -s.measure(CONTROLLED)))
    if denom <= 1e-300:
        u = np.sqrt(budget / np.sum(omega))
        return ControlSignal(mode, _fill(part, np.full(part.n, u)), w.t, None, theta, budget)
    kappa = np.sqrt(budget / denom)
    return ControlSignal(mode, {k: kappa * v for k, v in faces.items()}, w.t, None, theta, budget)


@dataclass
class ControlMargin:
    """``rhs`` is the outflow functional, ``lhs`` the injected weighted energy.

    ``margin = rhs - lhs`` equals the boundary term of the Lyapunov
    derivative.
    """

    lhs: float
    rhs: float
    margin: float
    passed: bool

    @property
    def boundary_term(self) -> float:
        return self.margin


def verify_control(u: ControlSignal, w: StateField, part: BoundaryPartition) -> ControlMargin:
    lhs = 0.0
    for s in part.sides:
        lhs -= float(np.sum(u.faces[s.label] ** 2 * s.measure(CONTROLLED)))
    rhs = outflow_functional(w, part)
    margin = rhs - lhs
    return ControlMargin(lhs, rhs, margin, bool(margin >= -1e-12 * (abs(rhs) + 1.0)))
