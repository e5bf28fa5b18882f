"""Grid geometry, coefficient storage and the scenario container.

All fields live at cell centres of a uniform Cartesian box.  A scalar field
is a plain ``ndarray`` of shape ``grid.shape``; multi-component quantities
carry leading axes, e.g. a state ``(n, *grid.shape)`` or a coupling matrix
``(n, n, *grid.shape)``.  Points handed to coefficient functions are arrays
of shape ``(d, ...)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import NonCharacteristicError, ValidationError

PointFunction = Callable[[np.ndarray], Any]

# |a_i| below this counts as a vanishing velocity.
NONCHAR_EPS = 1e-12


@dataclass(frozen=True)
class BoundarySide:
    """One side of the box: all faces with outward normal ``±e_axis``."""

    axis: int
    high: bool
    normal: np.ndarray
    area: float
    centers: np.ndarray  # (d, *face_shape), face_shape has size 1 along axis

    @property
    def label(self) -> str:
        return f"x{self.axis + 1}{'+' if self.high else '-'}"

    @property
    def index(self) -> int:
        """Cell index along ``axis`` of the adjacent interior layer."""
        return -1 if self.high else 0

    @property
    def face_count(self) -> int:
        return int(np.prod(self.centers.shape[1:]))


@dataclass(frozen=True)
class StructuredGrid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.cells)) or not self.cells:
            raise ValidationError("lower, upper and cells must have the same non-zero length")
        for k, (lo, hi, m) in enumerate(zip(self.lower, self.upper, self.cells)):
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
                raise ValidationError(f"axis {k + 1}: non-positive extent [{lo}, {hi}]")
            if int(m) != m or m < 2:
                raise ValidationError(f"axis {k + 1}: need at least 2 cells, got {m}")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.cells)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / m for lo, hi, m in zip(self.lower, self.upper, self.cells))

    @property
    def h(self) -> float:
        """Largest spacing; the reference length for tolerances."""
        return max(self.spacing)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    def axis_centers(self, k: int) -> np.ndarray:
        return self.lower[k] + (np.arange(self.cells[k]) + 0.5) * self.spacing[k]

    def centers(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``(d, *shape)``."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def sides(self) -> Iterator[BoundarySide]:
        x = self.centers()
        for k in range(self.dim):
            area = float(np.prod([h for l, h in enumerate(self.spacing) if l != k]))
            for high in (False, True):
                c = np.take(x, [-1 if high else 0], axis=1 + k).copy()
                c[k] = self.upper[k] if high else self.lower[k]
                normal = np.zeros(self.dim)
                normal[k] = 1.0 if high else -1.0
                yield BoundarySide(k, high, normal, area, c)

    @property
    def boundary_face_count(self) -> int:
        return sum(s.face_count for s in self.sides())

    def surface_area(self) -> float:
        ext = np.subtract(self.upper, self.lower)
        return float(sum(2 * np.prod(np.delete(ext, k)) for k in range(self.dim)))

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        lo = np.asarray(self.lower).reshape((-1,) + (1,) * (pts.ndim - 1))
        hi = np.asarray(self.upper).reshape((-1,) + (1,) * (pts.ndim - 1))
        return np.all((pts >= lo - tol) & (pts <= hi + tol), axis=0)


def build_grid(corners: Sequence[Sequence[float]], cells: Sequence[int]) -> StructuredGrid:
    """Build a uniform grid from ``[(lo, hi), ...]`` corner pairs and cell counts."""
    corners = [tuple(map(float, c)) for c in corners]
    if len(corners) != len(cells):
        raise ValidationError("one (lower, upper) pair is needed per axis")
    return StructuredGrid(
        tuple(c[0] for c in corners), tuple(c[1] for c in corners), tuple(int(m) for m in cells)
    )


def materialize(value: Any, pts_shape: tuple[int, ...]) -> np.ndarray:
    """Turn a (possibly nested) result of a point function into a dense array.

    Scalars inside nested lists are broadcast to ``pts_shape``, so functions
    may return e.g. ``[1.0, x[0]]`` for a velocity.
    """
    if isinstance(value, (list, tuple)):
        return np.stack([materialize(v, pts_shape) for v in value])
    arr = np.asarray(value, dtype=float)
    if arr.ndim >= len(pts_shape) and arr.shape[arr.ndim - len(pts_shape):] == pts_shape:
        return arr
    return np.broadcast_to(arr.reshape(arr.shape + (1,) * len(pts_shape)), arr.shape + pts_shape).copy()


def sample_field(grid: StructuredGrid, f: PointFunction) -> np.ndarray:
    """Sample ``f`` at cell centres."""
    values = materialize(f(grid.centers()), grid.shape)
    if not np.all(np.isfinite(values)):
        raise ValidationError("non-finite sample in field")
    return values


def cell_gradient(values: np.ndarray, grid: StructuredGrid, axis: int, lead: int = 0) -> np.ndarray:
    """Derivative along ``axis`` at cell centres.

    Central differences inside, second-order one-sided differences in the
    boundary-adjacent layer (first-order when the axis has only two cells).
    ``lead`` is the number of leading non-spatial axes of ``values``.
    """
    edge = 2 if grid.cells[axis] >= 3 else 1
    return np.gradient(values, grid.spacing[axis], axis=lead + axis, edge_order=edge)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Diagonal transport coefficients ``a_i`` and coupling matrix ``B``.

    ``velocity`` has shape ``(n, d, *shape)`` and ``coupling`` ``(n, n,
    *shape)``.  The ``*_fn`` callables, when present, evaluate the same
    quantities at arbitrary points; they are required for exact boundary
    values and for tracing characteristics.  Without them values are
    interpolated from the cell samples.
    """

    grid: StructuredGrid
    velocity: np.ndarray
    coupling: np.ndarray
    divergence: np.ndarray | None = None
    velocity_fn: PointFunction | None = None
    coupling_fn: PointFunction | None = None
    divergence_fn: PointFunction | None = None
    _interp: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n, d = self.velocity.shape[:2]
        if self.velocity.shape != (n, d) + self.grid.shape or d != self.grid.dim:
            raise ValidationError(f"velocity must have shape (n, {self.grid.dim}, *grid.shape)")
        if self.coupling.shape != (n, n) + self.grid.shape:
            raise ValidationError("coupling must have shape (n, n, *grid.shape)")
        if not (np.all(np.isfinite(self.velocity)) and np.all(np.isfinite(self.coupling))):
            raise ValidationError("non-finite coefficient entries")
        speed = np.sqrt(np.sum(self.velocity**2, axis=1))
        if np.any(speed < NONCHAR_EPS):
            i = int(np.argwhere(speed < NONCHAR_EPS)[0][0])
            raise NonCharacteristicError(f"velocity of component {i + 1} vanishes on the grid")

    @classmethod
    def from_functions(
        cls,
        grid: StructuredGrid,
        velocity_fn: PointFunction,
        coupling_fn: PointFunction | None = None,
        divergence_fn: PointFunction | None = None,
    ) -> "CoefficientSet":
        x = grid.centers()
        velocity = materialize(velocity_fn(x), grid.shape)
        if velocity.ndim == grid.dim + 1:
            velocity = velocity[None]
        n = velocity.shape[0]
        if coupling_fn is None:
            coupling = np.zeros((n, n) + grid.shape)
        else:
            coupling = materialize(coupling_fn(x), grid.shape)
        divergence = None
        if divergence_fn is not None:
            divergence = materialize(divergence_fn(x), grid.shape)
            if divergence.ndim == grid.dim:
                divergence = np.broadcast_to(divergence, (n,) + grid.shape).copy()
        return cls(grid, velocity, coupling, divergence, velocity_fn, coupling_fn, divergence_fn)

    @property
    def n(self) -> int:
        return self.velocity.shape[0]

    @property
    def dim(self) -> int:
        return self.velocity.shape[1]

    def _interpolate(self, name: str, data: np.ndarray, pts: np.ndarray) -> np.ndarray:
        axes = tuple(self.grid.axis_centers(k) for k in range(self.grid.dim))
        key = name
        if key not in self._interp:
            moved = np.moveaxis(data.reshape((-1,) + self.grid.shape), 0, -1)
            self._interp[key] = RegularGridInterpolator(
                axes, moved, bounds_error=False, fill_value=None
            )
        flat = pts.reshape(pts.shape[0], -1).T
        out = self._interp[key](flat).T
        return out.reshape(data.shape[: data.ndim - self.grid.dim] + pts.shape[1:])

    def velocity_at(self, pts: np.ndarray) -> np.ndarray:
        """All velocities at ``pts`` of shape ``(d, ...)``; result ``(n, d, ...)``."""
        if self.velocity_fn is not None:
            v = materialize(self.velocity_fn(pts), pts.shape[1:])
            return v if v.ndim == pts.ndim + 1 else v[None]
        return self._interpolate("velocity", self.velocity, pts)

    def coupling_at(self, pts: np.ndarray) -> np.ndarray:
        if self.coupling_fn is not None:
            return materialize(self.coupling_fn(pts), pts.shape[1:])
        return self._interpolate("coupling", self.coupling, pts)

    def divergence_at(self, i: int, pts: np.ndarray) -> np.ndarray:
        if self.divergence_fn is not None:
            div = materialize(self.divergence_fn(pts), pts.shape[1:])
            return div if div.ndim == pts.ndim - 1 else div[i]
        return self._interpolate(f"div{i}", divergence_a(self, i), pts)

    @property
    def has_analytic_divergence(self) -> bool:
        return self.divergence is not None


def divergence_a(coeffs: CoefficientSet, i: int) -> np.ndarray:
    """``div a_i`` at cell centres, analytic when the coefficient set provides it."""
    if not 0 <= i < coeffs.n:
        raise IndexError(f"component {i} out of range")
    if coeffs.divergence is not None:
        return coeffs.divergence[i]
    return sum(cell_gradient(coeffs.velocity[i, k], coeffs.grid, k) for k in range(coeffs.dim))


@dataclass
class StateField:
    """The unknowns ``w_1..w_n`` at time ``t``; the only mutable core type."""

    grid: StructuredGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == self.grid.dim:
            self.values = self.values[None]
        if self.values.shape[1:] != self.grid.shape:
            raise ValidationError("state values must have shape (n, *grid.shape)")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("non-finite state values")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "StateField":
        return StateField(self.grid, self.values.copy(), self.t)


def random_smooth_state(
    grid: StructuredGrid, n: int, seed: int = 0, amplitude: float = 0.3, modes: int = 2
) -> StateField:
    """Offset plus a few random low-frequency sine products per component."""
    rng = np.random.default_rng(seed)
    x = grid.centers()
    lo = np.asarray(grid.lower).reshape((-1,) + (1,) * grid.dim)
    ext = np.subtract(grid.upper, grid.lower).reshape((-1,) + (1,) * grid.dim)
    xi = (x - lo) / ext
    values = np.empty((n,) + grid.shape)
    for i in range(n):
        f = np.full(grid.shape, rng.uniform(0.5, 1.0))
        for wave in np.ndindex(*(modes,) * grid.dim):
            term = rng.normal() * amplitude
            for k, kk in enumerate(wave):
                term = term * np.sin(np.pi * (kk + 1) * xi[k] + rng.uniform(0, 2 * np.pi))
            f = f + term
        values[i] = f
    return StateField(grid, values)


CONTROL_MODES = ("spatial", "uniform", "scalar", "sharp")


@dataclass
class Scenario:
    """Everything needed for one closed-loop run.

    ``dissipation`` has shape ``(n, *shape)``; ``c_l`` holds the per
    component decay constants.  ``partition`` is built by
    :func:`hypstab.boundary.partition_boundary`.
    """

    grid: StructuredGrid
    coeffs: CoefficientSet
    weights: Any
    partition: Any
    dissipation: np.ndarray
    c_l: np.ndarray
    initial: StateField
    control_mode: str = "scalar"
    theta: float = 0.9
    T: float = 1.0
    cfl: float = 0.5
    name: str = "scenario"
    dissipation_mode: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c_l = np.broadcast_to(np.asarray(self.c_l, dtype=float), (self.coeffs.n,)).copy()
        if not np.all(self.c_l > 0):
            raise ValidationError("C_L must be > 0")
        if self.control_mode not in CONTROL_MODES:
            raise ValidationError(f"unknown control mode {self.control_mode!r}")
        if not self.T > 0:
            raise ValidationError("T must be > 0")
        if not 0 < self.cfl <= 1:
            raise ValidationError("CFL factor must lie in (0, 1]")
        if not 0 < self.theta <= 1:
            raise ValidationError("theta must lie in (0, 1]")
        if self.control_mode == "sharp" and self.theta != 1.0:
            raise ValidationError("sharp mode requires theta = 1")
        if self.initial.n != self.coeffs.n:
            raise ValidationError("initial state and coefficients disagree on n")

    @property
    def n(self) -> int:
        return self.coeffs.n

    @property
    def C_L(self) -> float:
        return float(self.c_l.min())
