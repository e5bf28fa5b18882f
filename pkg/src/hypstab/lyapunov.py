"""Weighted L2 Lyapunov functional and its decomposition.

``L = int w^T E w`` with ``E = diag(exp(mu_i))``.  Its derivative splits
into a boundary term (made non-negative by the feedback) and a volume term
``I`` which contains the coupling contribution ``S``.  All integrals use the
midpoint rule on cell centres.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CoefficientSet, StateField, cell_gradient, divergence_a
from .errors import ValidationError


def _mu(weights) -> np.ndarray:
    return weights.mu if hasattr(weights, "mu") else np.asarray(weights, dtype=float)


def lyapunov_value(w: StateField, weights) -> float:
    mu = _mu(weights)
    return float(np.sum(w.values**2 * np.exp(mu)) * w.grid.cell_volume)


def norm_bounds(w: StateField, weights) -> tuple[float, float]:
    """Lower and upper bound of ``L`` from the unweighted squared L2 norm."""
    mu = _mu(weights)
    sq = float(np.sum(w.values**2) * w.grid.cell_volume)
    return math.exp(mu.min()) * sq, math.exp(mu.max()) * sq


def transport_rate(coeffs: CoefficientSet, weights) -> np.ndarray:
    """``a_i . grad(mu_i) + div(a_i)`` per component, same stencils as the residual check."""
    mu = _mu(weights)
    grid = coeffs.grid
    out = np.empty_like(mu)
    for i in range(coeffs.n):
        q = divergence_a(coeffs, i).copy()
        for k in range(grid.dim):
            q += coeffs.velocity[i, k] * cell_gradient(mu[i], grid, k)
        out[i] = q
    return out


def source_term(w: StateField, B: np.ndarray, weights) -> float:
    """``S = -int w^T (B^T E + E B) w``."""
    mu = _mu(weights)
    Bw = np.einsum("ij...,j...->i...", B, w.values)
    return float(-2.0 * np.sum(np.exp(mu) * w.values * Bw) * w.grid.cell_volume)


def volume_term(w: StateField, coeffs: CoefficientSet, weights, rate: np.ndarray | None = None) -> float:
    """``I = int w^T [sum_k (M_k A_k + d_k A_k) E - (B^T E + E B)] w``.

    ``rate`` may carry a precomputed :func:`transport_rate`.
    """
    mu = _mu(weights)
    if rate is None:
        rate = transport_rate(coeffs, mu)
    transport = float(np.sum(w.values**2 * np.exp(mu) * rate) * w.grid.cell_volume)
    return transport + source_term(w, coeffs.coupling, mu)


@dataclass
class LyapunovTrace:
    """Samples ``(t, L, B, I, S, u_max)`` of one run, strictly ordered in t."""

    fingerprint: str = ""
    t: list = field(default_factory=list)
    L: list = field(default_factory=list)
    B: list = field(default_factory=list)
    I: list = field(default_factory=list)
    S: list = field(default_factory=list)
    u_max: list = field(default_factory=list)

    def append(self, t, L, B, I, S, u_max) -> None:
        if self.t and not t > self.t[-1]:
            raise ValidationError(f"trace time {t} does not increase past {self.t[-1]}")
        if L < 0:
            raise ValidationError("negative Lyapunov value")
        for name, v in zip(("t", "L", "B", "I", "S", "u_max"), (t, L, B, I, S, u_max)):
            getattr(self, name).append(float(v))

    def __len__(self) -> int:
        return len(self.t)

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def rate_running(self) -> np.ndarray:
        """``-ln(L(t)/L(0)) / t``; NaN at ``t = 0`` or once ``L`` vanished."""
        t, L = self.array("t"), self.array("L")
        with np.errstate(divide="ignore", invalid="ignore"):
            r = -np.log(L / L[0]) / (t - t[0])
        r[~np.isfinite(r)] = np.nan
        return r


@dataclass
class DecayFit:
    rate_on_L: float
    rate_on_norm: float
    intercept: float
    samples: int


def fit_decay_rate(trace: LyapunovTrace, window: tuple[float, float] | None = None) -> DecayFit:
    """Least-squares slope of ``-ln L`` against ``t`` inside ``window``.

    ``L`` is quadratic in the state, so the state-norm rate is half of the
    rate on ``L``.  Default window is the central 80% of the trace.
    """
    t, L = trace.array("t"), trace.array("L")
    if window is None:
        T0, T1 = t[0], t[-1]
        window = (T0 + 0.1 * (T1 - T0), T0 + 0.9 * (T1 - T0))
    sel = (t >= window[0]) & (t <= window[1])
    if np.count_nonzero(sel) < 3:
        raise ValidationError(f"need at least 3 samples in window {window}, got {int(np.sum(sel))}")
    if np.any(L[sel] <= 0):
        return DecayFit(math.inf, math.inf, math.nan, int(np.sum(sel)))
    slope, intercept = np.polyfit(t[sel], np.log(L[sel]), 1)
    return DecayFit(float(-slope), float(-slope / 2), float(intercept), int(np.sum(sel)))
