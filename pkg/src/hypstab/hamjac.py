"""Linearised Hamilton-Jacobi dynamics as transport systems.

For ``phi_t + H(x, grad phi) = 0`` the gradient ``Psi = grad phi`` obeys a
conservation law; a perturbation ``w`` around a reference gradient
``Psi_bar`` satisfies

    w_t + sum_k H_k(x) d_k w + B(x) w = 0,
    H_k = dH/dpsi_k (x, Psi_bar(x)),   B_ik = d H_k / d x_i,

so every component is transported by the same velocity ``grad_Psi H``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .boundary import partition_boundary
from .core import (
    NONCHAR_EPS,
    CoefficientSet,
    Scenario,
    StateField,
    StructuredGrid,
    cell_gradient,
    materialize,
)
from .dissipativity import build_dissipation
from .errors import NonCharacteristicError, ValidationError
from .scenarios import ControlConfig, make_initial, weight_tolerance
from .weights import (
    AxisFunctions,
    WeightField,
    characteristic_weight_function,
    constant_weight_function,
    separable_weight_function,
)

logger = logging.getLogger(__name__)


@dataclass
class HamiltonianSpec:
    """``H(x, psi)`` with points ``x`` and gradients ``psi`` of shape ``(d, ...)``.

    ``grad_psi(x, psi)`` and ``space_jacobian(x)`` (entry ``[i, k] = dH_k/dx_i``
    at the reference state) are optional; missing derivatives are taken by
    central differences.
    """

    H: Callable
    reference: Callable | Sequence[float]
    dim: int
    grad_psi: Callable | None = None
    space_jacobian: Callable | None = None

    def reference_at(self, x: np.ndarray) -> np.ndarray:
        if callable(self.reference):
            return materialize(self.reference(x), x.shape[1:])
        ref = np.asarray(self.reference, dtype=float)
        return np.broadcast_to(ref.reshape((-1,) + (1,) * (x.ndim - 1)), x.shape).copy()


def hamiltonian_gradient(spec: HamiltonianSpec, x: np.ndarray) -> np.ndarray:
    """``H_k(x)`` for all ``k``, shape ``(d, ...)``."""
    x = np.asarray(x, dtype=float)
    psi = spec.reference_at(x)
    if spec.grad_psi is not None:
        return materialize(spec.grad_psi(x, psi), x.shape[1:])
    delta = 1e-6 * (1.0 + np.sqrt(np.sum(psi**2, axis=0)))
    out = np.empty_like(psi)
    for k in range(spec.dim):
        e = np.zeros_like(psi)
        e[k] = delta
        plus = materialize(spec.H(x, psi + e), x.shape[1:])
        minus = materialize(spec.H(x, psi - e), x.shape[1:])
        out[k] = (plus - minus) / (2.0 * delta)
    return out


def hamiltonian_jacobian(spec: HamiltonianSpec, x: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """``B_ik = dH_k/dx_i``, shape ``(d, d, ...)``; differences use ``h_i / 2``."""
    x = np.asarray(x, dtype=float)
    if spec.space_jacobian is not None:
        return materialize(spec.space_jacobian(x), x.shape[1:])
    out = np.empty((spec.dim,) + x.shape)
    for i in range(spec.dim):
        dx = 0.5 * spacing[i]
        e = np.zeros_like(x)
        e[i] = dx
        out[i] = (hamiltonian_gradient(spec, x + e) - hamiltonian_gradient(spec, x - e)) / (2.0 * dx)
    return out


def linearize_hamiltonian(spec: HamiltonianSpec, grid: StructuredGrid) -> CoefficientSet:
    """Coefficient set with ``A^(k) = H_k Id`` and ``B = (dH_k/dx_i)``."""
    if spec.dim != grid.dim:
        raise ValidationError("Hamilton-Jacobi reduction needs n = d")
    n = spec.dim
    spacing = grid.spacing

    def velocity(x):
        g = hamiltonian_gradient(spec, x)
        return np.broadcast_to(g, (n,) + g.shape).copy()

    def coupling(x):
        return hamiltonian_jacobian(spec, x, spacing)

    def divergence(x):
        return np.trace(hamiltonian_jacobian(spec, x, spacing), axis1=0, axis2=1)

    speed = np.sqrt(np.sum(hamiltonian_gradient(spec, grid.centers()) ** 2, axis=0))
    if np.any(speed < NONCHAR_EPS):
        raise NonCharacteristicError("grad_Psi H vanishes at the reference state somewhere on the grid")
    return CoefficientSet.from_functions(grid, velocity, coupling, divergence)


def canned_hamiltonians(dim: int = 2) -> dict[str, HamiltonianSpec]:
    """Three reference Hamiltonians with analytic derivatives (``dim = 2``)."""
    if dim != 2:
        raise ValidationError("canned Hamiltonians are two-dimensional")
    c = np.array([1.0, 2.0])
    zero2 = lambda x: np.zeros((2, 2) + x.shape[1:])
    return {
        "linear": HamiltonianSpec(
            H=lambda x, p: c[0] * p[0] + c[1] * p[1],
            reference=[0.0, 0.0],
            dim=2,
            grad_psi=lambda x, p: [c[0], c[1]],
            space_jacobian=zero2,
        ),
        "potential": HamiltonianSpec(
            H=lambda x, p: x[0] * p[0] + x[1] * p[1],
            reference=[0.0, 0.0],
            dim=2,
            grad_psi=lambda x, p: [x[0], x[1]],
            space_jacobian=lambda x: [[1.0, 0.0], [0.0, 1.0]],
        ),
        "quadratic": HamiltonianSpec(
            H=lambda x, p: 0.5 * p[0] ** 2,
            reference=[1.0, 0.0],
            dim=2,
            grad_psi=lambda x, p: [p[0], 0.0],
            space_jacobian=zero2,
        ),
    }


# -- scenario factories ----------------------------------------------------


def _finish(grid, coeffs, weights, D, c_l, control, initial, T, cfl, name, dmode, meta, seed):
    control = control or ControlConfig()
    part = partition_boundary(coeffs, weights, grid, control.faces)
    init = make_initial(grid, coeffs.n, initial, seed)
    return Scenario(
        grid=grid,
        coeffs=coeffs,
        weights=weights,
        partition=part,
        dissipation=D,
        c_l=c_l,
        initial=init,
        control_mode=control.mode,
        theta=control.resolved_theta,
        T=T,
        cfl=cfl,
        name=name,
        dissipation_mode=dmode,
        meta=meta,
    )


def scenario_potential_flow(
    grad_phi: Callable,
    grid: StructuredGrid,
    c_l: float,
    *,
    hess_phi: Callable | None = None,
    anchor=0.0,
    control: ControlConfig | None = None,
    initial=None,
    seed: int = 0,
    T: float = 1.0,
    cfl: float = 0.5,
    h_char: float = 1e-3,
) -> Scenario:
    """Velocity ``grad phi``, coupling ``Hess phi`` and ``D = -2 lambda_min(Hess phi) Id``.

    Weights come from the characteristics tracer with inflow values
    ``anchor``; all components share one weight since they share velocity
    and dissipation.
    """
    d = grid.dim
    spec = HamiltonianSpec(
        H=lambda x, p: np.sum(materialize(grad_phi(x), x.shape[1:]) * p, axis=0),
        reference=np.zeros(d),
        dim=d,
        grad_psi=lambda x, p: grad_phi(x),
        space_jacobian=hess_phi,
    )
    coeffs = linearize_hamiltonian(spec, grid)

    def diss(x):
        Bx = hamiltonian_jacobian(spec, x, grid.spacing)
        stack = np.moveaxis(Bx.reshape(d, d, -1), -1, 0)
        return -2.0 * np.linalg.eigvalsh(stack)[:, 0].reshape(x.shape[1:])

    mu_fn = characteristic_weight_function(coeffs, 0, diss, c_l, anchor, h_char)
    mu0 = mu_fn(grid.centers())
    weights = WeightField(
        np.broadcast_to(mu0, (d,) + grid.shape).copy(),
        c_l,
        (mu_fn,) * d,
        route="characteristics",
        tol=weight_tolerance(grid),
    )
    choice = build_dissipation(coeffs.coupling, weights.exp, "symmetric-eig")
    return _finish(
        grid, coeffs, weights, choice.D, c_l, control, initial, T, cfl,
        "potential-flow", "symmetric-eig", {"h_char": h_char}, seed,
    )


def scenario_separable(
    axes: Sequence[AxisFunctions],
    grid: StructuredGrid,
    c_l: float,
    *,
    control: ControlConfig | None = None,
    initial=None,
    seed: int = 0,
    T: float = 1.0,
    cfl: float = 0.5,
) -> Scenario:
    """``H = sum_i H_i(x_i) psi_i``: diagonal coupling and the sharp decay setting."""
    d = grid.dim
    if len(axes) != d:
        raise ValidationError(f"need one H_k per axis ({d})")

    def ev(f, s):
        return np.broadcast_to(np.asarray(f(s), dtype=float), np.shape(s))

    def velocity(x):
        v = np.stack([ev(axes[k][0], x[k]) for k in range(d)])
        return np.broadcast_to(v, (d,) + v.shape).copy()

    def coupling(x):
        out = np.zeros((d, d) + x.shape[1:])
        for i in range(d):
            out[i, i] = ev(axes[i][1], x[i])
        return out

    def divergence(x):
        return sum(ev(axes[k][1], x[k]) for k in range(d))

    fns = tuple(separable_weight_function(axes, i, c_l, grid) for i in range(d))
    x = grid.centers()
    weights = WeightField(
        np.stack([f(x) for f in fns]), c_l, fns, route="separable", tol=weight_tolerance(grid)
    )
    coeffs = CoefficientSet.from_functions(grid, velocity, coupling, divergence)
    choice = build_dissipation(coeffs.coupling, weights.exp, "diagonal-b")
    control = control or ControlConfig(mode="sharp")
    return _finish(
        grid, coeffs, weights, choice.D, c_l, control, initial, T, cfl,
        "separable", "diagonal-b", {}, seed,
    )


def scenario_constant_gradient(
    C: Sequence[float],
    grid: StructuredGrid,
    c_l: float,
    *,
    profile: Callable | None = None,
    n: int | None = None,
    control: ControlConfig | None = None,
    initial=None,
    seed: int = 0,
    T: float = 1.0,
    cfl: float = 0.5,
) -> Scenario:
    """Constant ``grad_Psi H = C``: no coupling, ``D = 0``, closed-form weights.

    ``profile`` is the free inflow profile ``g``; ``None`` means ``g = 0``,
    the one-dimensional stabilising choice.
    """
    C = np.asarray(C, dtype=float)
    if C.shape != (grid.dim,):
        raise ValidationError(f"gradient must have {grid.dim} entries")
    if np.linalg.norm(C) < NONCHAR_EPS:
        raise NonCharacteristicError("constant Hamiltonian gradient must be non-zero")
    n = n or grid.dim
    coeffs = CoefficientSet.from_functions(
        grid,
        lambda x: [[float(c) for c in C]] * n,
        lambda x: np.zeros((n, n) + x.shape[1:]),
        lambda x: np.zeros((n,) + x.shape[1:]),
    )
    fn = constant_weight_function(C, c_l, profile)
    mu = fn(grid.centers())
    weights = WeightField(
        np.broadcast_to(mu, (n,) + grid.shape).copy(), c_l, (fn,) * n, route="constant",
        tol=weight_tolerance(grid),
    )
    D = np.zeros((n,) + grid.shape)
    return _finish(
        grid, coeffs, weights, D, c_l, control, initial, T, cfl,
        "constant-gradient", "positive-definite", {}, seed,
    )


# -- gradient structure ----------------------------------------------------


def gradient_state(grid: StructuredGrid, phi) -> StateField:
    """State ``w = grad phi0`` by differencing the sampled potential on the grid."""
    values = phi(grid.centers()) if callable(phi) else np.asarray(phi, dtype=float)
    values = materialize(values, grid.shape)
    return StateField(grid, np.stack([cell_gradient(values, grid, k) for k in range(grid.dim)]))


@dataclass
class GradientReport:
    max_commutator: float
    worst_pair: tuple[int, int]


def gradient_consistency_check(w0: StateField) -> GradientReport:
    """Largest ``|d_i w_j - d_j w_i|`` over cells and index pairs."""
    grid = w0.grid
    if w0.n != grid.dim:
        raise ValidationError("gradient structure needs n = d")
    worst, pair = 0.0, (0, 0)
    for i in range(grid.dim):
        for j in range(i + 1, grid.dim):
            c = np.max(np.abs(cell_gradient(w0.values[j], grid, i) - cell_gradient(w0.values[i], grid, j)))
            if c > worst:
                worst, pair = float(c), (i, j)
    return GradientReport(worst, pair)
