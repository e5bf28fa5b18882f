"""Exponential Lyapunov weights.

The weight ``mu_i`` of component ``i`` solves the stationary transport
equation

    a_i . grad(mu_i) + div(a_i) + D_ii = -C_L^(i)

on the box.  Three routes are provided: a closed form for constant velocity,
a separable quadrature for per-axis velocities ``a = (H_1(x_1), ...)`` with
``D = -2 diag(H_i')``, and a general characteristics tracer.  Every route
produces cell values plus a point evaluator so boundary faces see exact
weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import NONCHAR_EPS, CoefficientSet, StructuredGrid, cell_gradient, divergence_a, materialize
from .errors import NonCharacteristicError, UnsolvableGeometryError, WeightError

logger = logging.getLogger(__name__)

MU_BOUND = 700.0

PointFn = Callable[[np.ndarray], np.ndarray]
# per axis: (H_k, H_k', H_k'') as functions of the scalar coordinate x_k
AxisFunctions = tuple[Callable, Callable, Callable]


@dataclass
class WeightField:
    """Weights ``mu_1..mu_n`` at cell centres with their decay constants.

    ``evaluators[i]`` maps points ``(d, ...)`` to ``mu_i``; it is optional and
    used for boundary-face values (linear extrapolation otherwise).
    """

    mu: np.ndarray
    c_l: np.ndarray
    evaluators: tuple = ()
    route: str = "custom"
    tol: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.c_l = np.broadcast_to(np.asarray(self.c_l, dtype=float), self.mu.shape[:1]).copy()
        if not np.all(np.isfinite(self.mu)):
            raise WeightError("non-finite weight values")
        if np.max(np.abs(self.mu)) > MU_BOUND:
            raise WeightError(
                f"|mu| reaches {np.max(np.abs(self.mu)):.3g} > {MU_BOUND}; exp(mu) would overflow"
            )
        if not self.evaluators:
            self.evaluators = (None,) * self.n

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def exp(self) -> np.ndarray:
        return np.exp(self.mu)

    def range(self) -> float:
        return float(self.mu.max() - self.mu.min())

    def face_values(self, side) -> np.ndarray:
        """``mu`` on the faces of one boundary side, shape ``(n, *face_shape)``."""
        out = []
        seen = {}
        for i in range(self.n):
            fn = self.evaluators[i]
            if fn is not None:
                if id(fn) not in seen:
                    seen[id(fn)] = materialize(fn(side.centers), side.centers.shape[1:])
                out.append(seen[id(fn)])
                continue
            k = side.axis
            near = np.take(self.mu[i], [side.index], axis=k)
            nxt = np.take(self.mu[i], [-2 if side.high else 1], axis=k)
            out.append(1.5 * near - 0.5 * nxt)
        mu = np.stack(out)
        if np.max(np.abs(mu)) > MU_BOUND:
            raise WeightError("boundary weights exceed the overflow bound")
        return mu


@dataclass
class WeightResidual:
    values: np.ndarray
    max_norm: float
    l2_norm: float


def weight_residual(
    mu: np.ndarray,
    coeffs: CoefficientSet,
    i: int,
    dissipation: np.ndarray | float,
    c_l: float,
) -> WeightResidual:
    """Pointwise defect ``a_i . grad(mu) + div(a_i) + D_ii + C_L`` on the grid."""
    grid = coeffs.grid
    r = divergence_a(coeffs, i) + dissipation + c_l
    for k in range(grid.dim):
        r = r + coeffs.velocity[i, k] * cell_gradient(mu, grid, k)
    r = np.broadcast_to(r, grid.shape)
    return WeightResidual(
        np.array(r), float(np.max(np.abs(r))), float(np.sqrt(np.sum(r**2) * grid.cell_volume))
    )


# -- constant velocity ------------------------------------------------------


def constant_weight_function(a: Sequence[float], c_l: float, profile: Callable | None = None) -> PointFn:
    """Closed-form weight for constant velocity ``a``.

    With ``j`` the axis of largest ``|a_j|`` and ``y`` the remaining
    coordinates, ``mu = g(y - (a_y / a_j) x_j) - (C_L / a_j) x_j``.
    ``profile`` is ``g``; it receives an array ``(d-1, ...)``.
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)) or np.linalg.norm(a) < NONCHAR_EPS:
        raise NonCharacteristicError("constant velocity must be non-zero")
    j = int(np.argmax(np.abs(a)))
    rest = [k for k in range(a.size) if k != j]
    slope = a[rest] / a[j]

    def mu(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xj = x[j]
        out = -(c_l / a[j]) * xj
        if profile is not None:
            y = x[rest] - slope.reshape((-1,) + (1,) * (x.ndim - 1)) * xj
            out = out + materialize(profile(y), xj.shape)
        return out

    return mu


def solve_weight_constant(
    a: Sequence[float], c_l: float, grid: StructuredGrid, profile: Callable | None = None
) -> np.ndarray:
    return constant_weight_function(a, c_l, profile)(grid.centers())


# -- separable velocity -----------------------------------------------------


def _simpson_nodes(panels: int) -> tuple[np.ndarray, np.ndarray]:
    if panels % 2:
        panels += 1
    u = np.linspace(0.0, 1.0, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return u, w / (3.0 * panels)


def _integrate_from(lo: float, x: np.ndarray, f: Callable, panels: int) -> np.ndarray:
    """Composite Simpson of ``f`` over ``[lo, x]`` for each entry of ``x``."""
    u, w = _simpson_nodes(panels)
    x = np.asarray(x, dtype=float)
    t = lo + (x[..., None] - lo) * u
    return (x - lo) * np.sum(w * f(t), axis=-1)


def _check_nonvanishing(H: Callable, lo: float, hi: float, k: int) -> None:
    s = np.linspace(lo, hi, 2001)
    vals = np.broadcast_to(np.asarray(H(s), dtype=float), s.shape)
    if not np.all(np.isfinite(vals)) or np.min(np.abs(vals)) < NONCHAR_EPS or (
        vals.min() < 0 < vals.max()
    ):
        raise NonCharacteristicError(f"H_{k + 1} vanishes on [{lo}, {hi}]")


def separable_weight_function(
    axes: Sequence[AxisFunctions], i: int, c_l: float, grid: StructuredGrid, panels: int = 128
) -> PointFn:
    """Weight ``mu_i = sum_k F_k(x_k)`` for ``a = (H_1(x_1), ..., H_d(x_d))``.

    ``H_k F_k' = c_k + int (2 H_i'' delta_ki - H_k'')`` from the lower corner;
    ``c_k = 0`` except on the first axis, whose constant is fixed by the
    transport equation at the domain centre.  Both integrals use composite
    Simpson with ``panels`` subintervals.
    """
    d = grid.dim
    if len(axes) != d:
        raise WeightError(f"need one H_k per axis ({d}), got {len(axes)}")
    if not 0 <= i < d:
        raise WeightError(f"component {i} out of range for separable weights")
    for k, (H, _, _) in enumerate(axes):
        _check_nonvanishing(H, grid.lower[k], grid.upper[k], k)

    def inner(k: int) -> Callable:
        sign = 2.0 * (k == i) - 1.0
        d2H = axes[k][2]
        lo = grid.lower[k]
        f = lambda t: sign * np.broadcast_to(np.asarray(d2H(t), dtype=float), np.shape(t))
        return lambda s: _integrate_from(lo, s, f, panels)

    G = [inner(k) for k in range(d)]
    xc = grid.center
    # transport equation at the centre fixes sum_k c_k
    total = -c_l + 2.0 * float(axes[i][1](xc[i]))
    for k in range(d):
        total -= float(axes[k][1](xc[k])) + float(G[k](np.asarray(xc[k])))
    consts = np.zeros(d)
    consts[0] = total

    def dF(k: int) -> Callable:
        H = axes[k][0]
        return lambda s: (consts[k] + G[k](s)) / np.broadcast_to(np.asarray(H(s), dtype=float), np.shape(s))

    derivs = [dF(k) for k in range(d)]

    def F(k: int, s: np.ndarray) -> np.ndarray:
        # nested quadrature costs panels^2 per value: evaluate unique values in chunks
        vals, inv = np.unique(s, return_inverse=True)
        out = np.concatenate(
            [_integrate_from(grid.lower[k], c, derivs[k], panels) for c in np.array_split(vals, max(1, vals.size // 256))]
        )
        return out[inv].reshape(s.shape)

    def mu(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return sum(F(k, x[k]) for k in range(d))

    mu.constants = consts
    return mu


def solve_weight_separable(
    axes: Sequence[AxisFunctions], i: int, c_l: float, grid: StructuredGrid, panels: int = 128
) -> np.ndarray:
    return separable_weight_function(axes, i, c_l, grid, panels)(grid.centers())


# -- characteristics --------------------------------------------------------


@dataclass
class CharacteristicTrace:
    """One characteristic, ordered from its inflow foot point downstream.

    ``s`` is the flow parameter (``dx/ds = a_i``), ``mu`` the weight along
    the curve.  ``exited`` is False when the step budget ran out.
    """

    seed: np.ndarray
    s: np.ndarray
    x: np.ndarray
    mu: np.ndarray
    exited: bool


def _as_point_fn(value, coeffs: CoefficientSet, i: int | None = None) -> Callable:
    if callable(value):
        return lambda p: materialize(value(p), p.shape[1:])
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return lambda p: np.full(p.shape[1:], float(arr))
    if arr.shape == coeffs.grid.shape:
        from scipy.interpolate import RegularGridInterpolator

        axes = tuple(coeffs.grid.axis_centers(k) for k in range(coeffs.grid.dim))
        interp = RegularGridInterpolator(axes, arr, bounds_error=False, fill_value=None)
        return lambda p: interp(p.reshape(p.shape[0], -1).T).reshape(p.shape[1:])
    raise WeightError("dissipation must be a number, a grid field or a point function")


class _BackwardTracer:
    """Vectorised RK4 integration of characteristics against the flow."""

    def __init__(self, coeffs, i, dissipation, c_l, h_char, max_steps):
        self.coeffs = coeffs
        self.grid = coeffs.grid
        self.i = i
        self.D = _as_point_fn(dissipation, coeffs)
        self.c_l = c_l
        self.h = h_char
        self.max_steps = max_steps
        self.lo = np.asarray(self.grid.lower)[:, None]
        self.hi = np.asarray(self.grid.upper)[:, None]

    def rhs(self, x):
        a = self.coeffs.velocity_at(x)[self.i]
        if np.any(np.sqrt(np.sum(a**2, axis=0)) < NONCHAR_EPS):
            raise NonCharacteristicError(f"velocity of component {self.i + 1} vanishes on a characteristic")
        src = -self.c_l - self.coeffs.divergence_at(self.i, x) - self.D(x)
        return -a, src

    def rk4(self, x, tau):
        k1x, k1 = self.rhs(x)
        k2x, k2 = self.rhs(x + 0.5 * tau * k1x)
        k3x, k3 = self.rhs(x + 0.5 * tau * k2x)
        k4x, k4 = self.rhs(x + tau * k3x)
        dx = tau * (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0
        dJ = tau * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        return x + dx, dJ

    def outside(self, x):
        return np.max(np.maximum(self.lo - x, x - self.hi), axis=0)

    def exit_fraction(self, x):
        """Step length in ``(0, h]`` that lands each point on the boundary.

        Illinois-type regula falsi on the signed distance, bracketed by
        ``[0, h]``.
        """
        a = np.zeros(x.shape[1])
        b = np.full(x.shape[1], self.h)
        ga = self.outside(x)
        gb = self.outside(self.rk4(x, b)[0])
        side = np.zeros(x.shape[1], dtype=int)
        tol = 1e-14 * (1.0 + np.max(np.abs(self.hi)))
        for _ in range(80):
            c = np.where(gb > ga, (a * gb - b * ga) / np.where(gb > ga, gb - ga, 1.0), 0.5 * (a + b))
            c = np.clip(c, a, b)
            gc = self.outside(self.rk4(x, c)[0])
            out = gc > 0
            b = np.where(out, c, b)
            gb = np.where(out, gc, np.where(side == -1, 0.5 * gb, gb))
            a = np.where(out, a, c)
            ga = np.where(out, np.where(side == 1, 0.5 * ga, ga), gc)
            side = np.where(out, 1, -1)
            if np.all((np.abs(gc) < tol) | (b - a < 1e-15 * self.h)):
                break
        return np.where(np.abs(gc) < tol, c, a)

    def run(self, pts, record=False):
        x = np.array(pts, dtype=float).reshape(pts.shape[0], -1)
        npts = x.shape[1]
        J = np.zeros(npts)
        tau = np.zeros(npts)
        active = np.ones(npts, dtype=bool)
        history = [(0.0, x[:, 0].copy(), 0.0)] if record else None
        steps = 0
        while active.any():
            if steps >= self.max_steps:
                raise UnsolvableGeometryError(
                    f"{int(active.sum())} characteristic(s) of component {self.i + 1} did not reach "
                    f"the inflow boundary in {self.max_steps} steps (recirculating flow?)"
                )
            idx = np.flatnonzero(active)
            xa = x[:, idx]
            xn, dJ = self.rk4(xa, self.h)
            out = self.outside(xn) > 0
            if out.any():
                o = idx[out]
                frac = self.exit_fraction(xa[:, out])
                xe, dJe = self.rk4(xa[:, out], frac)
                x[:, o] = np.clip(xe, self.lo, self.hi)
                J[o] += dJe
                tau[o] += frac
                active[o] = False
            keep = idx[~out]
            x[:, keep] = xn[:, ~out]
            J[keep] += dJ[~out]
            tau[keep] += self.h
            steps += 1
            if record:
                history.append((tau[0], x[:, 0].copy(), J[0]))
        return x.reshape(pts.shape), J.reshape(pts.shape[1:]), history


def characteristic_weight_function(
    coeffs: CoefficientSet,
    i: int,
    dissipation,
    c_l: float,
    anchor=0.0,
    h_char: float = 1e-3,
    max_steps: int = 200_000,
) -> PointFn:
    """Weight by tracing each query point back to the inflow boundary.

    Along ``dx/ds = a_i`` the weight obeys ``dmu/ds = -C_L - div(a_i) - D_ii``;
    the value at a point is the ``anchor`` value at its inflow foot plus the
    integral of that rate, computed with classical RK4 at step ``h_char``.
    The final partial step is bisected so the foot lies on the boundary.
    """
    tracer = _BackwardTracer(coeffs, i, dissipation, c_l, h_char, max_steps)
    anchor_fn = _as_point_fn(anchor, coeffs)

    def mu(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        foot, J, _ = tracer.run(x)
        return anchor_fn(foot) + J

    return mu


def solve_weight_characteristics(
    coeffs: CoefficientSet,
    i: int,
    dissipation,
    c_l: float,
    anchor=0.0,
    h_char: float = 1e-3,
    max_steps: int = 200_000,
) -> np.ndarray:
    fn = characteristic_weight_function(coeffs, i, dissipation, c_l, anchor, h_char, max_steps)
    return fn(coeffs.grid.centers())


def trace_characteristic(
    coeffs: CoefficientSet,
    i: int,
    point: Sequence[float],
    dissipation=0.0,
    c_l: float = 1.0,
    anchor=0.0,
    h_char: float = 1e-3,
    max_steps: int = 200_000,
) -> CharacteristicTrace:
    """The characteristic through ``point``, reported from its inflow foot."""
    tracer = _BackwardTracer(coeffs, i, dissipation, c_l, h_char, max_steps)
    p = np.asarray(point, dtype=float).reshape(-1, 1)
    try:
        foot, J, hist = tracer.run(p, record=True)
        exited = True
    except UnsolvableGeometryError:
        exited = False
        foot, J, hist = p, np.zeros(1), [(0.0, p[:, 0], 0.0)]
    s_back = np.array([h[0] for h in hist])
    xs = np.array([h[1] for h in hist])
    Js = np.array([h[2] for h in hist])
    base = float(_as_point_fn(anchor, coeffs)(foot.reshape(-1, 1))[0])
    total = s_back[-1]
    # reverse so the trace runs downstream from the foot
    return CharacteristicTrace(
        seed=xs[-1],
        s=(total - s_back)[::-1],
        x=xs[::-1],
        mu=(base + Js[-1] - Js)[::-1],
        exited=exited,
    )
