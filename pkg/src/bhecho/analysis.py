"""Decay fits, perturbative predictions, the critical-point scan and Feshbach tuning."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .echo import EchoCurve, Scenario, _variance, echo_curve, make_scenario
from .operators import operator_set
from .propagator import DEFAULT_CONFIG, PropagatorConfig
from .spectra import ground_state, low_spectrum
from .states import amplitudes_of

logger = logging.getLogger(__name__)

THERMODYNAMIC_JC = 0.52
MIN_FIT_POINTS = 8
DEFAULT_FLOORS = {"gaussian": 0.8, "quartic": 0.95}


class FitError(ValueError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# decay fits


class _DecayRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of a one-parameter decay law through f(0) = 1.

    Points enter the fit when ``f >= f_floor`` and, if ``t_window`` is set,
    ``t_window[0] <= t <= t_window[1]``.
    """

    model = None

    def __init__(self, f_floor=None, t_window=None, min_points=MIN_FIT_POINTS):
        self.f_floor = f_floor
        self.t_window = t_window
        self.min_points = min_points

    def _select(self, t, f):
        floor = DEFAULT_FLOORS[self.model] if self.f_floor is None else self.f_floor
        mask = f >= floor
        if self.t_window is not None:
            lo, hi = self.t_window
            if lo > hi:
                raise ValueError(f"t_window {self.t_window} is reversed")
            mask &= (t >= lo) & (t <= hi)
        return mask & (f > 0), floor

    def fit(self, X, y):
        t = column_or_1d(np.asarray(X, dtype=float).reshape(-1), warn=False)
        f = column_or_1d(np.asarray(y, dtype=float).reshape(-1), warn=False)
        if t.shape != f.shape:
            raise ValueError(f"times and fidelities differ in length: {t.shape} vs {f.shape}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(f))):
            raise ValueError("non-finite input")
        mask, floor = self._select(t, f)
        n = int(mask.sum())
        diag = {"model": self.model, "f_floor": floor, "t_window": self.t_window, "n_points": n}
        if n < self.min_points:
            raise FitError(f"{self.model} fit: only {n} usable points (need {self.min_points})", diag)
        x, z = self._linearize(t[mask], f[mask])
        denom = float(np.dot(x, x))
        if denom == 0.0:
            raise FitError(f"{self.model} fit: window contains only t = 0", diag)
        param = float(np.dot(x, z) / denom)
        scale = float(np.max(np.abs(z))) / max(float(np.max(np.abs(x))), 1e-300)
        if param < 0:
            if param < -1e-9 * max(scale, 1e-300):
                diag["parameter"] = param
                raise FitError(f"{self.model} fit produced negative parameter {param:.3e}", diag)
            param = 0.0
        self.param_ = param
        self.window_ = (float(t[mask].min()), float(t[mask].max()))
        self.n_points_ = n
        self.f_floor_ = floor
        self.rms_residual_ = float(np.sqrt(np.mean((f[mask] - self._model(t[mask], param)) ** 2)))
        return self

    def predict(self, X):
        check_is_fitted(self, "param_")
        t = np.asarray(X, dtype=float).reshape(-1)
        return self._model(t, self.param_)


class GaussianDecayRegressor(_DecayRegressor):
    """f(t) = exp(-alpha t^2), fitted as -ln f against t^2."""

    model = "gaussian"

    @staticmethod
    def _linearize(t, f):
        return t**2, -np.log(f)

    @staticmethod
    def _model(t, alpha):
        return np.exp(-alpha * t**2)

    @property
    def alpha_(self):
        return self.param_


class QuarticDecayRegressor(_DecayRegressor):
    """f(t) = 1 - c t^4, fitted as 1 - f against t^4."""

    model = "quartic"

    @staticmethod
    def _linearize(t, f):
        return t**4, 1.0 - f

    @staticmethod
    def _model(t, c):
        return 1.0 - c * t**4

    @property
    def c_(self):
        return self.param_


_REGRESSORS = {"gaussian": GaussianDecayRegressor, "quartic": QuarticDecayRegressor}


@dataclass
class DecayFit:
    model: str
    parameter: float
    window: tuple
    rms_residual: float
    n_points: int
    f_floor: float

    def predict(self, t):
        return _REGRESSORS[self.model]._model(np.asarray(t, dtype=float), self.parameter)


def fit_decay(curve, model: str = "gaussian", window="shoulder", f_floor: float | None = None,
              min_points: int = MIN_FIT_POINTS) -> DecayFit:
    """Fit ``curve`` (an EchoCurve or a ``(times, f)`` pair) to a decay law.

    ``window="shoulder"`` keeps points with f >= 0.8 (gaussian) or
    f >= 0.95 (quartic); a ``(t_lo, t_hi)`` tuple restricts by time as well,
    with ``f_floor`` defaulting to 0 in that case.
    """
    if model not in _REGRESSORS:
        raise ValueError(f"unknown model {model!r}")
    times, f = (curve.times, curve.fidelities) if isinstance(curve, EchoCurve) else curve
    t_window = None
    if window != "shoulder":
        t_window = tuple(float(x) for x in window)
        if f_floor is None:
            f_floor = 0.0
    reg = _REGRESSORS[model](f_floor=f_floor, t_window=t_window, min_points=min_points)
    reg.fit(times, f)
    return DecayFit(model, reg.param_, reg.window_, reg.rms_residual_, reg.n_points_, reg.f_floor_)


def onset_exponent(curve, t_lo: float, t_hi: float) -> float:
    """Log-log slope of 1 - f against t over [t_lo, t_hi]."""
    times, f = (curve.times, curve.raw) if isinstance(curve, EchoCurve) else curve
    times = np.asarray(times, dtype=float)
    loss = 1.0 - np.asarray(f, dtype=float)
    mask = (times >= t_lo) & (times <= t_hi) & (times > 0) & (loss > 0)
    if mask.sum() < 2:
        raise FitError("need at least two points with f < 1 in the window")
    slope, _ = np.polyfit(np.log(times[mask]), np.log(loss[mask]), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# perturbation theory


def variance_oracle(psi0, scenario: Scenario) -> float:
    """Short-time decay rate <D^2> - <D>^2 with D = H_f + H_b."""
    psi = amplitudes_of(psi0, scenario.tag)
    psi = psi / np.linalg.norm(psi)
    return _variance(scenario.perturbation, psi)


@dataclass
class Prediction:
    value: np.ndarray | float
    validity_bound: float
    in_window: np.ndarray | bool


def perturbative_prediction(kind: str, t, J: float = 1.0, U: float = 1.0, magnitude: float = 0.0,
                            beta: float | None = None) -> Prediction:
    """Closed-form short-time fidelity laws.

    ``delta_u``: 1 - J^2 dU^2 t^4, valid for t << 1/sqrt(J dU).
    ``delta_j``: 1 - dJ^2 t^2, valid for t << 1/dJ.
    ``gravity``: 1 - (2 F J)^2 t^4 with F = m g d, valid for t << 1/sqrt(2 F J).
    ``gaussian``: exp(-beta dU^2 t^2), beta defaulting to U/J, meaningful for t >~ 1/J.
    ``in_window`` marks points before the validity bound (after it for ``gaussian``).
    """
    t_arr = np.asarray(t, dtype=float)
    d = abs(magnitude)
    if kind == "delta_u":
        value = 1.0 - J**2 * d**2 * t_arr**4
        bound = 1.0 / math.sqrt(abs(J) * d) if J and d else math.inf
        inside = t_arr < bound
    elif kind == "delta_j":
        value = 1.0 - d**2 * t_arr**2
        bound = 1.0 / d if d else math.inf
        inside = t_arr < bound
    elif kind == "gravity":
        value = 1.0 - (2.0 * d * J) ** 2 * t_arr**4
        bound = 1.0 / math.sqrt(2.0 * d * abs(J)) if J and d else math.inf
        inside = t_arr < bound
    elif kind == "gaussian":
        if beta is None:
            beta = U / J
        value = np.exp(-beta * d**2 * t_arr**2)
        bound = 1.0 / abs(J) if J else math.inf
        inside = t_arr >= bound
    else:
        raise ValueError(f"unknown prediction kind {kind!r}")
    if t_arr.ndim == 0:
        return Prediction(float(value), bound, bool(inside))
    return Prediction(value, bound, inside)


# ---------------------------------------------------------------------------
# critical scan


@dataclass
class CriticalScan:
    n_sites: int
    n_bosons: int
    delta_j: float
    U: float
    J_grid: np.ndarray
    alpha: np.ndarray
    alpha_oracle: np.ndarray
    alpha_normalized: np.ndarray
    alpha_per_bond: np.ndarray
    dalpha_dJ: np.ndarray
    peak_location: float
    peak_height: float
    gap: np.ndarray
    fit_residual: np.ndarray
    status: list
    metadata: dict = field(default_factory=dict)
    reference_jc: float = THERMODYNAMIC_JC

    @property
    def failures(self) -> dict:
        return {float(J): s for J, s in zip(self.J_grid, self.status) if s != "ok"}

    def to_csv(self, extra_metadata: dict | None = None) -> str:
        buf = io.StringIO()
        meta = dict(self.metadata)
        meta.update(extra_metadata or {})
        meta["reference_jc"] = self.reference_jc
        meta["peak_location"] = f"{self.peak_location:.17g}"
        meta["peak_height"] = f"{self.peak_height:.17g}"
        for key, val in meta.items():
            buf.write(f"# {key}={val}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["J", "alpha_raw", "alpha_normalized", "dalpha_dJ", "gap", "fit_residual", "status",
                    "alpha_oracle", "alpha_per_bond"])
        deriv = np.full(self.J_grid.shape, np.nan)
        deriv[1:-1] = self.dalpha_dJ
        for row in zip(self.J_grid, self.alpha, self.alpha_normalized, deriv, self.gap,
                       self.fit_residual, self.status, self.alpha_oracle, self.alpha_per_bond):
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
        return buf.getvalue()


def _fmt(v):
    v = float(v)
    return "" if math.isnan(v) else f"{v:.17g}"


def central_derivative(x, y):
    """Second-order central differences at the interior points of a uniform grid."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] < 3:
        raise ValueError("need at least three grid points")
    h = np.diff(x)
    if not np.allclose(h, h[0], rtol=1e-9, atol=1e-12):
        raise ValueError("central differences need a uniform grid")
    return (y[2:] - y[:-2]) / (2.0 * h[0])


def parabolic_peak(x, y):
    """Argmax of ``y`` refined by the parabola through its neighbours."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.all(np.isnan(y)):
        return math.nan, math.nan
    k = int(np.nanargmax(y))
    if 0 < k < y.shape[0] - 1 and np.all(np.isfinite(y[k - 1:k + 2])):
        y0, y1, y2 = y[k - 1:k + 2]
        curv = y0 - 2.0 * y1 + y2
        if curv < 0:
            h = x[k + 1] - x[k]
            return float(x[k] + h * (y0 - y2) / (2.0 * curv)), float(y1 - (y2 - y0) ** 2 / (8.0 * curv))
    return float(x[k]), float(y[k])


def _scan_point(n_sites, n_bosons, J, delta_j, U, times, f_floor, compute_gap, cfg, eig_tol):
    ops = operator_set((n_sites, n_bosons))
    out = {"alpha": math.nan, "oracle": math.nan, "residual": math.nan, "gap": math.nan, "status": "ok"}
    try:
        H = ops.hamiltonian(J=J, U=U)
        if compute_gap:
            sl = low_spectrum(H, k=2, tol=eig_tol)
            psi = sl.eigenvectors[0]
            out["gap"] = sl.gap
        else:
            psi = ground_state(H, tol=eig_tol).state
        sc = make_scenario("delta_j_symmetric", ops.basis, J=J, U=U, magnitude=delta_j)
        out["oracle"] = variance_oracle(psi, sc)
        curve = echo_curve(psi, sc, times, cfg)
        fit = fit_decay(curve, "gaussian", f_floor=f_floor)
        out["alpha"] = fit.parameter
        out["residual"] = fit.rms_residual
    except Exception as exc:  # one bad point must not sink the scan
        logger.warning("scan point J=%g failed: %s", J, exc)
        out["status"] = f"failed: {type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    return out


def critical_scan(n_sites: int, J_grid, delta_j: float = 0.05, U: float = 1.0, n_bosons: int | None = None,
                  t_max: float = 0.05, n_times: int = 41, f_floor: float = 0.8, compute_gap: bool = True,
                  n_jobs: int = 1, cfg: PropagatorConfig = DEFAULT_CONFIG, eig_tol: float = 1e-10) -> CriticalScan:
    """Initial echo decay rate against J for the symmetric dJ protocol.

    At each J the ground state of H(J, U) is evolved with J - dJ/2 and
    reversed with J + dJ/2; alpha is the gaussian fit of f(t) on
    ``n_times`` points in [0, t_max] (points with f below ``f_floor`` are
    dropped). Normalization divides by alpha at J = 0 when the grid holds
    it, else by the Fock-state oracle value 4 (N - 1) dJ^2. The peak is
    taken on |d alpha_normalized / dJ|.
    """
    n_bosons = n_sites if n_bosons is None else n_bosons
    J_grid = np.asarray(J_grid, dtype=float)
    if J_grid.ndim != 1 or J_grid.shape[0] < 3 or np.any(np.diff(J_grid) <= 0):
        raise ValueError("J_grid must be ascending with at least three points")
    times = np.linspace(0.0, t_max, n_times)
    operator_set((n_sites, n_bosons))  # fail fast on oversized bases
    points = Parallel(n_jobs=n_jobs)(
        delayed(_scan_point)(n_sites, n_bosons, float(J), delta_j, U, times, f_floor, compute_gap, cfg, eig_tol)
        for J in J_grid
    )
    alpha = np.array([p["alpha"] for p in points])
    oracle = np.array([p["oracle"] for p in points])
    at_zero = np.nonzero(np.isclose(J_grid, 0.0, atol=1e-12))[0]
    if at_zero.size and np.isfinite(alpha[at_zero[0]]):
        norm = alpha[at_zero[0]]
    else:
        norm = 4.0 * (n_sites - 1) * delta_j**2
    alpha_norm = alpha / norm
    deriv = central_derivative(J_grid, alpha_norm)
    peak_loc, peak_height = parabolic_peak(J_grid[1:-1], np.abs(deriv))
    meta = {
        "n_sites": n_sites,
        "n_bosons": n_bosons,
        "delta_j": delta_j,
        "U": U,
        "J_grid": f"{J_grid[0]:g}:{J_grid[-1]:g}:{J_grid.shape[0]}",
        "window_policy": f"t in [0;{t_max:g}] ({n_times} points) and f >= {f_floor:g}",
        "normalization": "alpha(J=0)" if at_zero.size else "4(N-1)dJ^2",
        "per_bond_normalization": f"(N-1)dJ^2 = {(n_sites - 1) * delta_j**2:.17g}",
    }
    return CriticalScan(
        n_sites=n_sites,
        n_bosons=n_bosons,
        delta_j=delta_j,
        U=U,
        J_grid=J_grid,
        alpha=alpha,
        alpha_oracle=oracle,
        alpha_normalized=alpha_norm,
        alpha_per_bond=alpha / ((n_sites - 1) * delta_j**2),
        dalpha_dJ=deriv,
        peak_location=peak_loc,
        peak_height=peak_height,
        gap=np.array([p["gap"] for p in points]),
        fit_residual=np.array([p["residual"] for p in points]),
        status=[p["status"] for p in points],
        metadata=meta,
    )


class CriticalScanEstimator(BaseEstimator):
    """Estimator front-end to :func:`critical_scan`; ``fit`` takes the J grid."""

    def __init__(self, n_sites=4, n_bosons=None, delta_j=0.05, U=1.0, t_max=0.05, n_times=41,
                 f_floor=0.8, compute_gap=True, n_jobs=1):
        self.n_sites = n_sites
        self.n_bosons = n_bosons
        self.delta_j = delta_j
        self.U = U
        self.t_max = t_max
        self.n_times = n_times
        self.f_floor = f_floor
        self.compute_gap = compute_gap
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        grid = np.asarray(X, dtype=float).reshape(-1)
        self.scan_ = critical_scan(
            self.n_sites, grid, delta_j=self.delta_j, U=self.U, n_bosons=self.n_bosons, t_max=self.t_max,
            n_times=self.n_times, f_floor=self.f_floor, compute_gap=self.compute_gap, n_jobs=self.n_jobs,
        )
        self.alpha_ = self.scan_.alpha
        self.alpha_normalized_ = self.scan_.alpha_normalized
        self.dalpha_dJ_ = self.scan_.dalpha_dJ
        self.peak_location_ = self.scan_.peak_location
        self.peak_height_ = self.scan_.peak_height
        self.gap_ = self.scan_.gap
        return self

    def transform(self, X):
        """Normalized decay rate interpolated onto ``X``."""
        check_is_fitted(self, "scan_")
        return np.interp(np.asarray(X, dtype=float).reshape(-1), self.scan_.J_grid, self.alpha_normalized_)


# ---------------------------------------------------------------------------
# Feshbach tuning


@dataclass(frozen=True)
class FeshbachParams:
    a_bg: float
    B0: float
    delta_B: float

    def __post_init__(self):
        if self.delta_B == 0:
            raise ValueError("resonance width delta_B must be non-zero")


class FeshbachPoleError(ValueError):
    pass


def scattering_length(fp: FeshbachParams, B, guard: float = 1e-6):
    """a_s(B) = a_bg (1 - delta_B / (B - B0)); raises within ``guard * |delta_B|`` of the pole."""
    B_arr = np.asarray(B, dtype=float)
    detuning = B_arr - fp.B0
    if np.any(np.abs(detuning) < guard * abs(fp.delta_B)):
        raise FeshbachPoleError(f"field within {guard:g}*|delta_B| of the resonance at B0={fp.B0}")
    a = fp.a_bg * (1.0 - fp.delta_B / detuning)
    return float(a) if a.ndim == 0 else a


def field_for_scattering_length(fp: FeshbachParams, a_s: float) -> float:
    """Field B with a_s(B) = a_s; ``a_s = a_bg`` has no finite solution."""
    ratio = 1.0 - a_s / fp.a_bg
    if ratio == 0:
        raise ValueError("a_s = a_bg is only reached as |B| -> infinity")
    return fp.B0 + fp.delta_B / ratio


def sign_flip_field(fp: FeshbachParams, B: float) -> float:
    """Field at which the scattering length is the negative of its value at ``B``."""
    return field_for_scattering_length(fp, -scattering_length(fp, B))
