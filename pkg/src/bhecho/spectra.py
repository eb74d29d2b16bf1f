"""Ground states, low-lying spectra and level-spacing statistics."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .states import StateVector

logger = logging.getLogger(__name__)

DENSE_MAX_DIM = 2000
DEGENERACY_TOL = 1e-10
ZERO_SPACING_TOL = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class SpectrumSlice:
    eigenvalues: np.ndarray
    eigenvectors: list | None = None
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0))
    method: str = "dense"

    @property
    def gap(self) -> float:
        if self.eigenvalues.shape[0] < 2:
            raise ValueError("gap needs at least two eigenvalues")
        return float(self.eigenvalues[1] - self.eigenvalues[0])

    @property
    def degenerate_ground(self) -> bool:
        return self.eigenvalues.shape[0] >= 2 and self.gap < DEGENERACY_TOL

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "eigenvalue", "residual"])
        res = self.residuals if self.residuals.size else np.zeros_like(self.eigenvalues)
        for i, (e, r) in enumerate(zip(self.eigenvalues, res)):
            w.writerow([i, f"{e:.17g}", f"{r:.6e}"])
        return buf.getvalue()


@dataclass
class GroundState:
    energy: float
    state: StateVector
    residual: float
    degenerate: bool | None = None

    def __iter__(self):
        # allows ``energy, psi = ground_state(H)``
        yield self.energy
        yield self.state


def _fix_gauge(vec):
    """Make the largest-modulus amplitude real and positive."""
    k = int(np.argmax(np.abs(vec)))
    phase = vec[k] / abs(vec[k])
    return vec / phase


def _residual(H, vec, energy):
    return float(np.linalg.norm(H @ vec - energy * vec))


def _start_vector(dim, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 0.1
    return v.astype(np.complex128)


def _project_out(w, locked):
    if locked is None or locked.shape[0] == 0:
        return w
    w = w - locked.T @ (locked.conj() @ w)
    return w - locked.T @ (locked.conj() @ w)


def lanczos_lowest(H, tol=1e-10, locked=None, krylov_dim=120, max_restarts=200, seed=0):
    """Lowest eigenpair of ``H`` restricted to the complement of ``locked``.

    Explicitly restarted Lanczos with full reorthogonalization against the
    Krylov basis and the locked vectors. Restarting from the locked
    complement is what resolves degenerate eigenvalues one copy at a time.
    """
    dim = H.dim
    n_locked = 0 if locked is None else locked.shape[0]
    room = dim - n_locked
    if room < 1:
        raise ValueError("no space left outside the locked vectors")
    m = min(krylov_dim, room)
    v = _project_out(_start_vector(dim, seed), locked)
    v /= np.linalg.norm(v)
    best = np.inf
    for _ in range(max_restarts):
        V = np.empty((m, dim), dtype=np.complex128)
        alpha = np.empty(m)
        beta = np.empty(m)
        V[0] = v
        k = m
        for j in range(m):
            w = H @ V[j]
            alpha[j] = np.vdot(V[j], w).real
            w = _project_out(w, locked)
            w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
            w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
            # roundoff reintroduces locked directions, which Lanczos would amplify
            w = _project_out(w, locked)
            beta[j] = np.linalg.norm(w)
            if j == m - 1:
                break
            if beta[j] <= 1e-13 * max(abs(alpha[j]), 1.0):
                k = j + 1
                break
            V[j + 1] = w / beta[j]
        if k == 1:
            theta, S = alpha[:1], np.ones((1, 1))
        else:
            theta, S = eigh_tridiagonal(alpha[:k], beta[: k - 1])
        x = _project_out(V[:k].T @ S[:, 0], locked)
        x /= np.linalg.norm(x)
        energy = float(np.vdot(x, H @ x).real)
        res = _residual(H, x, energy)
        best = min(best, res)
        if res <= tol:
            return energy, x, res
        v = x
    raise ConvergenceError(
        f"Lanczos did not reach residual {tol:.1e} after {max_restarts} restarts (best {best:.3e})",
        residual=best,
    )


def _dense_eigh(H):
    return np.linalg.eigh(H.toarray())


def _choose(method, dim):
    if method == "auto":
        return "dense" if dim <= DENSE_MAX_DIM else "lanczos"
    if method not in ("dense", "lanczos"):
        raise ValueError(f"unknown method {method!r}")
    return method


def low_spectrum(H, k: int = 2, tol: float = 1e-10, method: str = "auto", vectors: bool = True,
                 seed: int = 0) -> SpectrumSlice:
    """The ``k`` lowest eigenvalues of ``H``, each residual-checked."""
    dim = H.dim
    if not 1 <= k <= dim:
        raise ValueError(f"k must lie in [1, {dim}], got {k}")
    method = _choose(method, dim)
    if method == "dense":
        w, v = _dense_eigh(H)
        w, v = w[:k], v[:, :k]
        vecs = [_fix_gauge(v[:, i]) for i in range(k)]
        res = np.array([_residual(H, x, e) for x, e in zip(vecs, w)])
    else:
        locked = np.empty((0, dim), dtype=np.complex128)
        for i in range(k):
            _, x, _ = lanczos_lowest(H, tol=tol, locked=locked, seed=seed + i)
            locked = np.vstack([locked, x])
        # Rayleigh-Ritz on the locked set gives sorted, mutually consistent pairs
        Hk = locked.conj() @ np.column_stack([H @ x for x in locked])
        w, S = np.linalg.eigh(0.5 * (Hk + Hk.conj().T))
        vecs = [_fix_gauge(locked.T @ S[:, i]) for i in range(k)]
        res = np.array([_residual(H, x, e) for x, e in zip(vecs, w)])
    if np.any(res > tol * max(1.0, H.norm_bound()) * 10):
        raise ConvergenceError(f"eigenpair residuals too large: max {res.max():.3e}", residual=res.max())
    tag = getattr(H, "tag", ())
    return SpectrumSlice(
        eigenvalues=np.asarray(w, dtype=float),
        eigenvectors=[StateVector(tag, x) for x in vecs] if vectors else None,
        residuals=res,
        method=method,
    )


def full_spectrum(H) -> np.ndarray:
    """All eigenvalues via dense diagonalization (ascending)."""
    if H.dim > DENSE_MAX_DIM * 5:
        raise ValueError(f"dense spectrum of dimension {H.dim} is too large")
    return np.linalg.eigvalsh(H.toarray())


def ground_state(H, tol: float = 1e-10, method: str = "auto", check_degeneracy: bool = False,
                 seed: int = 0) -> GroundState:
    """Lowest eigenpair with ``||H psi - E psi|| <= tol``.

    The returned vector is normalized with its largest amplitude real and
    positive. ``degenerate`` is set when a second eigenvalue is known
    (always for the dense path) and lies within 1e-10 of the first.
    """
    method = _choose(method, H.dim)
    tag = getattr(H, "tag", ())
    if method == "dense" or check_degeneracy:
        sl = low_spectrum(H, k=min(2, H.dim), tol=tol, method=method, seed=seed)
        degenerate = sl.degenerate_ground if H.dim > 1 else False
        if degenerate:
            logger.warning("degenerate ground state (gap %.2e); returning one vector of the ground space", sl.gap)
        psi = sl.eigenvectors[0]
        return GroundState(float(sl.eigenvalues[0]), psi, float(sl.residuals[0]), degenerate)
    energy, x, res = lanczos_lowest(H, tol=tol, seed=seed)
    x = _fix_gauge(x)
    return GroundState(energy, StateVector(tag, x), _residual(H, x, energy), None)


def spacing_ratio(levels, return_details: bool = False):
    """Mean ratio of consecutive level spacings, min(s_n, s_n+1) / max(s_n, s_n+1).

    Spacings below 1e-12 are dropped (and counted) before forming ratios.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1:
        raise ValueError("levels must be one-dimensional")
    if np.any(np.diff(levels) < 0):
        raise ValueError("levels must be sorted ascending")
    s = np.diff(levels)
    zero = s <= ZERO_SPACING_TOL
    s = s[~zero]
    if s.shape[0] < 2 or np.unique(levels).shape[0] < 4:
        raise ValueError("spacing ratio needs at least 4 distinct levels")
    r = np.minimum(s[:-1], s[1:]) / np.maximum(s[:-1], s[1:])
    mean_r = float(r.mean())
    if return_details:
        return mean_r, {"ratios": r, "n_degenerate": int(zero.sum())}
    return mean_r
