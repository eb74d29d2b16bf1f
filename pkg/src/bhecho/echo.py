"""Loschmidt-echo protocols: forward/backward evolution, perturbation scenarios, pulse sequences."""

from __future__ import annotations

import io
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import hbar

from .operators import HermitianOperator, _check_tags, operator_set, phase_imprint
from .propagator import DEFAULT_CONFIG, PropagationError, PropagatorConfig, evolve
from .states import amplitudes_of

logger = logging.getLogger(__name__)

SCENARIO_KINDS = ("ideal", "delta_j_symmetric", "delta_j_oneleg", "delta_u", "gravity")
FIDELITY_SLACK = 1e-9


class PulseDurationWarning(UserWarning):
    """The imprint pulse is long enough to excite dynamics inside a lattice well."""


@dataclass(frozen=True, eq=False)
class Scenario:
    """Forward generator ``H_f`` and backward generator ``H_b`` of an echo.

    ``perturbation`` is ``H_f + H_b``, which vanishes for a perfect reversal.
    """

    kind: str
    J: float
    U: float
    magnitude: float
    forward: HermitianOperator
    backward: HermitianOperator

    @property
    def tag(self):
        return self.forward.tag

    @property
    def perturbation(self) -> HermitianOperator:
        return self.forward + self.backward

    def describe(self) -> dict:
        return {"kind": self.kind, "J": self.J, "U": self.U, "magnitude": self.magnitude}


def make_scenario(kind: str, basis, J: float = 1.0, U: float = 1.0, magnitude: float = 0.0) -> Scenario:
    """Assemble the forward/backward pair for a named perturbation.

    ``magnitude`` is dJ, dU or the tilt F depending on ``kind``; it is
    ignored for ``ideal``.
    """
    if kind not in SCENARIO_KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")
    for name, val in (("J", J), ("U", U), ("magnitude", magnitude)):
        if not np.isfinite(val):
            raise ValueError(f"{name} must be finite")
    ops = operator_set(basis)
    h = ops.hamiltonian
    d = magnitude
    if kind == "ideal":
        fwd = h(J=J, U=U)
        bwd = -fwd
    elif kind == "delta_j_symmetric":
        fwd = h(J=J - d / 2, U=U)
        bwd = h(J=-(J + d / 2), U=-U)
    elif kind == "delta_j_oneleg":
        fwd = h(J=J, U=U)
        bwd = h(J=-J + d, U=-U)
    elif kind == "delta_u":
        fwd = h(J=J, U=U)
        bwd = h(J=-J, U=-U + d)
    else:
        fwd = h(J=J, U=U, F=d)
        bwd = h(J=-J, U=-U, F=d)
    return Scenario(kind, float(J), float(U), float(d), fwd, bwd)


@dataclass
class EchoCurve:
    times: np.ndarray
    fidelities: np.ndarray
    raw: np.ndarray
    protocol: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return self.times.shape[0]

    def to_csv(self, metadata: dict | None = None) -> str:
        buf = io.StringIO()
        meta = dict(self.protocol)
        if metadata:
            meta.update(metadata)
        for key, val in meta.items():
            buf.write(f"# {key}={val}\n")
        buf.write("t,f\n")
        for t, f in zip(self.times, self.fidelities):
            buf.write(f"{t:.17g},{f:.17g}\n")
        return buf.getvalue()


def _finish(times, raw, protocol, notes=()):
    raw = np.asarray(raw, dtype=float)
    bad = (raw < -FIDELITY_SLACK) | (raw > 1 + FIDELITY_SLACK)
    notes = list(notes)
    if np.any(bad):
        msg = f"{int(bad.sum())} fidelity values outside [0, 1] beyond integrator slack"
        logger.warning(msg)
        notes.append(msg)
    return EchoCurve(np.asarray(times, dtype=float), np.clip(raw, 0.0, 1.0), raw, protocol, notes)


def _check_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("time grid must be a non-empty 1-D array")
    if t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValueError("time grid must be non-negative and ascending")
    return t


def _initial(psi0, tag):
    v = np.array(amplitudes_of(psi0, tag), dtype=np.complex128)
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"initial state must be normalized (norm {n:.12g})")
    return v / n


def _co_propagate(chi0, phi0, forward, backward, t_grid, cfg, overlap):
    """Shared loop: chi = e^{-i H_f t} chi0, phi = e^{+i H_b t} phi0; f = overlap(phi, chi, t)."""
    chi = chi0.copy()
    phi = phi0.copy()
    raw = np.empty(t_grid.shape[0])
    t_prev = 0.0
    for k, t in enumerate(t_grid):
        dt = t - t_prev
        try:
            if dt > 0:
                chi = evolve(forward, chi, dt, cfg)
                phi = evolve(backward, phi, -dt, cfg)
            raw[k] = overlap(phi, chi, t)
        except PropagationError as exc:
            raise PropagationError(f"propagation failed at t={t}: {exc}") from exc
        t_prev = t
    return raw


def echo_curve(psi0, scenario: Scenario, t_grid=None, cfg: PropagatorConfig = DEFAULT_CONFIG,
               **grid_kw) -> EchoCurve:
    """f(t) = |<psi0| e^{-i H_b t} e^{-i H_f t} |psi0>|^2 on ``t_grid``.

    Both legs are propagated once, incrementally: the overlap of
    ``e^{-i H_f t} psi0`` with ``e^{+i H_b t} psi0`` equals the two-leg
    amplitude. With no grid, one is chosen by :func:`auto_time_grid`.
    """
    psi = _initial(psi0, scenario.tag)
    notes = []
    if t_grid is None:
        t_grid, grid_notes = auto_time_grid(psi, scenario, cfg=cfg, **grid_kw)
        notes += grid_notes
    t_grid = _check_grid(t_grid)

    def overlap(phi, chi, t):
        if t == 0:
            return 1.0
        return abs(np.vdot(phi, chi)) ** 2

    raw = _co_propagate(psi, psi, scenario.forward, scenario.backward, t_grid, cfg, overlap)
    return _finish(t_grid, raw, {"protocol": "echo", **scenario.describe()}, notes)


def two_leg_echo(psi0, scenario: Scenario, t_grid, cfg: PropagatorConfig = DEFAULT_CONFIG) -> EchoCurve:
    """Literal evaluation: evolve forward for t, then backward for t, at every grid point."""
    psi = _initial(psi0, scenario.tag)
    t_grid = _check_grid(t_grid)
    raw = np.empty(t_grid.shape[0])
    for k, t in enumerate(t_grid):
        out = evolve(scenario.backward, evolve(scenario.forward, psi, t, cfg), t, cfg)
        raw[k] = abs(np.vdot(psi, out)) ** 2
    return _finish(t_grid, raw, {"protocol": "echo-two-leg", **scenario.describe()})


def auto_time_grid(psi0, scenario: Scenario, n_points: int = 200, target: float = 0.1,
                   t_start: float | None = None, t_cap: float = 1000.0, n_probe: int = 41,
                   cfg: PropagatorConfig = DEFAULT_CONFIG):
    """Uniform grid on [0, t_max] with f(t_max) close to ``target``.

    ``t_max`` is doubled from ``t_start`` until a coarse probe curve drops to
    ``target``, then cut at the first probe point that reaches it.
    """
    psi = _initial(psi0, scenario.tag)
    if t_start is None:
        var = _variance(scenario.perturbation, psi)
        t_start = 1.0 / math.sqrt(var) if var > 1e-12 else 1.0
    t_max = min(t_start, t_cap)
    notes = []
    while True:
        probe = np.linspace(0.0, t_max, n_probe)
        f = echo_curve(psi, scenario, probe, cfg).raw
        hit = np.nonzero(f <= target)[0]
        if hit.size:
            t_max = float(probe[hit[0]])
            break
        if t_max >= t_cap:
            notes.append(f"f stayed above {target} up to t_cap={t_cap}")
            logger.info(notes[-1])
            break
        t_max = min(2.0 * t_max, t_cap)
    return np.linspace(0.0, t_max, n_points), notes


def _variance(op, psi) -> float:
    w = op @ psi
    mean = np.vdot(psi, w)
    return float(max(np.vdot(w, w).real - abs(mean) ** 2, 0.0))


@dataclass(frozen=True)
class SequenceSpec:
    """Experimental echo sequence: forward leg, imprint, backward leg with flipped U.

    Imprint modes: ``"ideal"`` multiplies by exp(-i (pi + phase_error) sum j n_j);
    ``"pulsed"`` evolves for ``tau`` under the lattice Hamiltonian plus a tilt
    ``F_pulse`` (lattice terms omitted when ``pulse_includes_lattice`` is
    false). ``closing_imprint`` repeats the imprint after the backward leg,
    which undoes the momentum boost for states that are not Fock states.

    ``mass``, ``spacing`` and ``tau_physical`` (SI units) are optional; when
    all are given, a pulse longer than 2 m d^2 / (pi^2 hbar) is flagged.
    """

    J: float = 1.0
    U: float = 1.0
    F_background: float = 0.0
    imprint: str = "ideal"
    phase_error: float = 0.0
    delta_u: float = 0.0
    F_pulse: float | None = None
    tau: float | None = None
    pulse_includes_lattice: bool = True
    closing_imprint: bool = False
    mass: float | None = None
    spacing: float | None = None
    tau_physical: float | None = None

    def __post_init__(self):
        if self.imprint not in ("ideal", "pulsed"):
            raise ValueError(f"imprint must be 'ideal' or 'pulsed', got {self.imprint!r}")
        if self.imprint == "pulsed":
            if self.tau is None or not self.tau > 0:
                raise ValueError("pulsed imprint needs tau > 0")
            if self.F_pulse is None:
                raise ValueError("pulsed imprint needs F_pulse")

    @classmethod
    def pulsed_pi(cls, tau: float, **kw) -> "SequenceSpec":
        """Pulsed sequence with the tilt chosen so that F_pulse * tau = pi."""
        return cls(imprint="pulsed", tau=tau, F_pulse=math.pi / tau, **kw)

    def check(self) -> list[str]:
        notes = []
        if self.imprint == "pulsed" and abs(self.F_pulse * self.tau - math.pi) > 1e-9:
            notes.append(f"pulse area F_pulse*tau = {self.F_pulse * self.tau:.12g} differs from pi")
        if None not in (self.mass, self.spacing, self.tau_physical):
            bound = pulse_duration_bound(self.mass, self.spacing)
            if self.tau_physical >= bound:
                notes.append(
                    f"pulse duration {self.tau_physical:.3e} s exceeds the intra-well bound {bound:.3e} s"
                )
                warnings.warn(notes[-1], PulseDurationWarning, stacklevel=3)
        return notes


def pulse_duration_bound(mass: float, spacing: float) -> float:
    """Longest imprint pulse (seconds) that leaves intra-well dynamics unexcited: 2 m d^2 / (pi^2 hbar)."""
    return 2.0 * mass * spacing**2 / (math.pi**2 * hbar)


def sequence_echo(psi0, seq: SequenceSpec, basis, t_grid, cfg: PropagatorConfig = DEFAULT_CONFIG) -> EchoCurve:
    """Return probability after forward leg, imprint, and backward leg with U -> -U + dU."""
    ops = operator_set(basis)
    psi = _initial(psi0, ops.tag)
    t_grid = _check_grid(t_grid)
    notes = seq.check()
    h1 = ops.hamiltonian(J=seq.J, U=seq.U, F=seq.F_background)
    h2 = ops.hamiltonian(J=seq.J, U=-seq.U + seq.delta_u, F=seq.F_background)

    if seq.imprint == "ideal":
        gate = phase_imprint(ops.basis, math.pi + seq.phase_error)

        def apply(v):
            return gate @ v

        def apply_inverse(v):
            return gate.adjoint() @ v
    else:
        if seq.pulse_includes_lattice:
            h_pulse = ops.hamiltonian(J=seq.J, U=seq.U, F=seq.F_background + seq.F_pulse)
        else:
            h_pulse = ops.hamiltonian(F=seq.F_background + seq.F_pulse)

        def apply(v):
            return evolve(h_pulse, v, seq.tau, cfg)

        def apply_inverse(v):
            return evolve(h_pulse, v, -seq.tau, cfg)

    _check_tags(h1, h2)
    target = apply_inverse(psi) if seq.closing_imprint else psi

    def overlap(phi, chi, t):
        return abs(np.vdot(phi, apply(chi))) ** 2

    raw = _co_propagate(psi, target, h1, h2, t_grid, cfg, overlap)
    protocol = {
        "protocol": "sequence",
        "J": seq.J,
        "U": seq.U,
        "F_background": seq.F_background,
        "imprint": seq.imprint,
        "phase_error": seq.phase_error,
        "delta_u": seq.delta_u,
        "F_pulse": seq.F_pulse,
        "tau": seq.tau,
        "closing_imprint": seq.closing_imprint,
    }
    return _finish(t_grid, raw, protocol, notes)
