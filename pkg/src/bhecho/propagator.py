"""Krylov (Lanczos) propagation psi -> exp(-i H t) psi with adaptive substeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .states import amplitudes_of, like

logger = logging.getLogger(__name__)


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PropagatorConfig:
    krylov_dim: int = 30
    step_tolerance: float = 1e-10
    max_substeps: int = 10_000

    def __post_init__(self):
        if self.krylov_dim < 2:
            raise ValueError("krylov_dim must be >= 2")
        if not self.step_tolerance > 0:
            raise ValueError("step_tolerance must be positive")
        if self.max_substeps < 1:
            raise ValueError("max_substeps must be >= 1")


DEFAULT_CONFIG = PropagatorConfig()


def _lanczos_basis(matvec, v, m, dt=None, tol=None):
    """Lanczos with full reorthogonalization. Returns (V, alpha, beta, beta_next).

    With ``dt`` and ``tol`` given, the basis stops growing as soon as the
    error estimate for a step of length ``dt`` is below ``tol``.
    """
    n = v.shape[0]
    m = min(m, n)
    V = np.empty((m, n), dtype=np.complex128)
    alpha = np.empty(m)
    beta = np.empty(max(m - 1, 0))
    V[0] = v
    scale = 0.0
    for j in range(m):
        w = matvec(V[j])
        a = np.vdot(V[j], w).real
        alpha[j] = a
        # two passes of classical Gram-Schmidt keep the basis orthonormal
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        scale = max(scale, abs(a), b)
        if j == m - 1:
            return V, alpha, beta, b
        if b <= 1e-14 * max(scale, 1.0):
            # invariant subspace: the projection is exact
            return V[: j + 1], alpha[: j + 1], beta[:j], 0.0
        if dt is not None and j >= 1:
            c = _krylov_coefficients(alpha[: j + 1], beta[:j], dt)
            if b * abs(c[-1]) <= 0.1 * tol:
                return V[: j + 1], alpha[: j + 1], beta[:j], b
        beta[j] = b
        V[j + 1] = w / b
    return V, alpha, beta, 0.0


def _krylov_coefficients(alpha, beta, dt):
    if alpha.shape[0] == 1:
        return np.array([np.exp(-1j * alpha[0] * dt)])
    theta, S = eigh_tridiagonal(alpha, beta)
    return S @ (np.exp(-1j * theta * dt) * S[0])


def evolve(H, psi, t: float, cfg: PropagatorConfig = DEFAULT_CONFIG, return_info: bool = False):
    """Return exp(-i H t) psi.

    Each substep projects onto a Krylov space of dimension ``cfg.krylov_dim``;
    the step is halved until the a-posteriori error estimate
    ``beta_m * |c_m|`` is below ``cfg.step_tolerance``.
    """
    v = np.array(amplitudes_of(psi, getattr(H, "tag", None)), dtype=np.complex128)
    if v.shape[0] != H.dim:
        raise ValueError(f"state dimension {v.shape[0]} != operator dimension {H.dim}")
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    info = {"substeps": 0, "error_bound": 0.0}
    if t == 0:
        return (like(psi, v), info) if return_info else like(psi, v)

    matvec = H.__matmul__
    norm = np.linalg.norm(v)
    if norm == 0:
        return (like(psi, v), info) if return_info else like(psi, v)
    v /= norm
    sign = 1.0 if t > 0 else -1.0
    remaining = abs(t)
    dt = remaining
    while remaining > 0:
        V, alpha, beta, b_next = _lanczos_basis(matvec, v, cfg.krylov_dim, sign * min(dt, remaining),
                                                 cfg.step_tolerance)
        step = min(dt, remaining)
        while True:
            c = _krylov_coefficients(alpha, beta, sign * step)
            err = b_next * abs(c[-1])
            if err <= cfg.step_tolerance:
                break
            step *= 0.5
            if step < 1e-300:
                raise PropagationError(f"Krylov step underflow at t={t}")
        v = V.T @ c
        v /= np.linalg.norm(v)
        remaining -= step
        if remaining <= 1e-15 * abs(t):
            remaining = 0.0
        info["substeps"] += 1
        info["error_bound"] += err
        if info["substeps"] > cfg.max_substeps:
            raise PropagationError(
                f"exceeded {cfg.max_substeps} substeps propagating to t={t} "
                f"(remaining {remaining:.3e})"
            )
        # next attempt starts from the last accepted step, allowed to grow
        dt = 2.0 * step
    out = like(psi, norm * v)
    return (out, info) if return_info else out
