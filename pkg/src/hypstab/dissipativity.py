"""Diagonal dissipation matrices for the coupling term.

The quadratic-form condition

    -v^T (B^T E + E B) v <= v^T D E v   for all v,

with ``E = diag(exp(mu_i))``, is checked pointwise through the smallest
eigenvalue of ``D E + B^T E + E B``.  Eigenvalues come from a batched cyclic
Jacobi iteration, deterministic in its sweep order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DissipativityError, ValidationError

MODES = ("general-q", "symmetric-eig", "diagonal-b", "positive-definite")
CERT_TOL = 1e-10


def jacobi_eigenvalues(M: np.ndarray, tol: float = 1e-12, max_sweeps: int = 64) -> np.ndarray:
    """Eigenvalues of a stack of symmetric matrices ``(..., n, n)``, ascending."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValidationError("non-finite matrix entries")
    n = M.shape[-1]
    batch = M.shape[:-2]
    A = M.reshape((-1, n, n))
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    scale = np.sqrt(np.sum(A**2, axis=(1, 2)))
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[:, off_mask] ** 2, axis=1))
        if np.all(off <= tol * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                live = np.abs(apq) > 1e-300
                safe = np.where(live, apq, 1.0)
                theta = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(live, t, 0.0)
                c = 1.0 / np.sqrt(t**2 + 1.0)
                s = t * c
                # A <- R^T A R restricted to rows/cols p, q
                rp, rq = A[:, p, :].copy(), A[:, q, :].copy()
                A[:, p, :] = c[:, None] * rp - s[:, None] * rq
                A[:, q, :] = s[:, None] * rp + c[:, None] * rq
                cp, cq = A[:, :, p].copy(), A[:, :, q].copy()
                A[:, :, p] = c[:, None] * cp - s[:, None] * cq
                A[:, :, q] = s[:, None] * cp + c[:, None] * cq
    return np.sort(np.diagonal(A, axis1=1, axis2=2), axis=1).reshape(batch + (n,))


def min_eigenvalue_symmetric(M: np.ndarray) -> float:
    """Smallest eigenvalue of one symmetric matrix."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(jacobi_eigenvalues(M[None])[0, 0])


def _to_cells(B: np.ndarray, E: np.ndarray | None):
    """Reshape field data to per-cell stacks ``(N, n, n)`` and ``(N, n)``."""
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    spatial = B.shape[2:]
    Bc = np.moveaxis(B.reshape(n, n, -1), -1, 0)
    if E is None:
        Ec = np.ones((Bc.shape[0], n))
    else:
        E = np.broadcast_to(np.asarray(E, dtype=float), (n,) + spatial)
        Ec = np.moveaxis(E.reshape(n, -1), -1, 0)
    return Bc, Ec, spatial


def _form(Bc: np.ndarray, Ec: np.ndarray, Dc: np.ndarray) -> np.ndarray:
    """Per-cell symmetric matrix ``D E + B^T E + E B``."""
    BtE = np.swapaxes(Bc, 1, 2) * Ec[:, None, :]
    EB = Ec[:, :, None] * Bc
    M = BtE + EB
    idx = np.arange(Bc.shape[1])
    M[:, idx, idx] += Dc * Ec
    return M


@dataclass
class DissipationChoice:
    mode: str
    D: np.ndarray  # (n, *shape) diagonal entries per cell
    certificate: np.ndarray  # (*shape) min eigenvalue of D E + B^T E + E B


def build_dissipation(B: np.ndarray, E: np.ndarray | None, mode: str) -> DissipationChoice:
    """Pick a diagonal ``D`` for the coupling ``B`` (shape ``(n, n, *shape)``).

    Modes
    -----
    general-q
        ``D = C(Q) Id`` with ``Q = E^{-1/2} B^T E^{1/2}`` and
        ``C(Q) = lambda_max(-(Q + Q^T))``.
    symmetric-eig
        ``D = -2 lambda_min(B) Id``; needs ``B`` symmetric.  The estimate is
        only valid when ``E`` commutes with ``B`` (e.g. equal weights), which
        the certificate verifies.
    diagonal-b
        ``D = -2 B``; needs ``B`` diagonal.
    positive-definite
        ``D = 0``; needs ``B^T E + E B`` positive semidefinite.
    """
    mode = mode.lower()
    if mode not in MODES:
        raise ValidationError(f"unknown dissipation mode {mode!r}; expected one of {MODES}")
    Bc, Ec, spatial = _to_cells(B, E)
    N, n, _ = Bc.shape
    scale = max(1.0, float(np.max(np.abs(Bc))) if Bc.size else 1.0)
    offdiag = Bc[:, ~np.eye(n, dtype=bool)]

    if mode == "diagonal-b":
        if offdiag.size and np.max(np.abs(offdiag)) > 1e-12 * scale:
            raise DissipativityError("mode diagonal-b requires a diagonal coupling matrix")
        Dc = -2.0 * np.diagonal(Bc, axis1=1, axis2=2)
    elif mode == "symmetric-eig":
        if np.max(np.abs(Bc - np.swapaxes(Bc, 1, 2))) > 1e-12 * scale:
            raise DissipativityError("mode symmetric-eig requires a symmetric coupling matrix")
        lam = jacobi_eigenvalues(Bc)[:, 0]
        Dc = np.repeat(-2.0 * lam[:, None], n, axis=1)
    elif mode == "general-q":
        root = np.sqrt(Ec)
        Q = np.swapaxes(Bc, 1, 2) * root[:, None, :] / root[:, :, None]
        lam = jacobi_eigenvalues(Q + np.swapaxes(Q, 1, 2))[:, 0]
        Dc = np.repeat(-lam[:, None], n, axis=1)
    else:
        Dc = np.zeros((N, n))
        lam = jacobi_eigenvalues(_form(Bc, Ec, Dc))[:, 0]
        if np.min(lam) < -CERT_TOL * scale:
            raise DissipativityError(
                f"mode positive-definite: B^T E + E B has eigenvalue {np.min(lam):.3g} < 0"
            )

    cert = jacobi_eigenvalues(_form(Bc, Ec, Dc))[:, 0]
    if np.min(cert) < -CERT_TOL * scale * max(1.0, float(np.max(Ec))):
        raise DissipativityError(
            f"mode {mode}: dissipativity certificate {np.min(cert):.3g} is negative"
        )
    D = np.moveaxis(Dc, 0, -1).reshape((n,) + spatial)
    return DissipationChoice(mode, D, cert.reshape(spatial))


@dataclass
class DissipativityReport:
    passed: bool
    worst_margin: float
    worst_cell: tuple
    probe_margin: float
    consistent: bool


def check_dissipativity(
    B: np.ndarray, E: np.ndarray | None, D: np.ndarray, sample_count: int = 8, seed: int = 0
) -> DissipativityReport:
    """Verify the quadratic-form inequality cell by cell.

    The exact margin is the smallest eigenvalue of ``D E + B^T E + E B``;
    ``sample_count`` random unit vectors per cell probe the same form as a
    redundant check (a probe can never undercut the eigenvalue).
    """
    Bc, Ec, spatial = _to_cells(B, E)
    N, n, _ = Bc.shape
    Dc = np.moveaxis(np.broadcast_to(np.asarray(D, dtype=float), (n,) + spatial).reshape(n, -1), -1, 0)
    M = _form(Bc, Ec, Dc)
    lam = jacobi_eigenvalues(M)[:, 0]
    worst = int(np.argmin(lam))
    probe = np.inf
    if sample_count > 0:
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(N, sample_count, n))
        v /= np.linalg.norm(v, axis=2, keepdims=True)
        quad = np.einsum("nsi,nij,nsj->ns", v, M, v)
        probe = float(np.min(quad))
    scale = max(1.0, float(np.max(np.abs(M))))
    cell = np.unravel_index(worst, spatial) if spatial else ()
    return DissipativityReport(
        passed=bool(lam[worst] >= -CERT_TOL * scale),
        worst_margin=float(lam[worst]),
        worst_cell=tuple(int(c) for c in cell),
        probe_margin=probe,
        consistent=bool(probe >= lam.min() - 1e-10 * scale),
    )
