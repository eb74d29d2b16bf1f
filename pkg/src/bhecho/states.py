"""Normalized state vectors over a Fock basis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import CompositionError, _as_basis

NORM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitudes tagged with the ``(n_sites, n_bosons)`` basis they live on."""

    tag: tuple
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.ndim != 1:
            raise ValueError("amplitudes must be one-dimensional")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "tag", tuple(self.tag))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.amplitudes, dtype=dtype)

    def __len__(self):
        return self.amplitudes.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def overlap(self, other) -> complex:
        """<self|other>."""
        if isinstance(other, StateVector) and other.tag != self.tag:
            raise CompositionError(f"basis mismatch: {self.tag} vs {other.tag}")
        return complex(np.vdot(self.amplitudes, np.asarray(other)))

    def normalized(self) -> "StateVector":
        n = self.norm
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.tag, self.amplitudes / n)


def amplitudes_of(psi, tag=None) -> np.ndarray:
    """Raw amplitude array of ``psi``; checks the basis tag when both are known."""
    if isinstance(psi, StateVector):
        if tag is not None and psi.tag != tuple(tag):
            raise CompositionError(f"state lives on {psi.tag}, operator on {tuple(tag)}")
        return psi.amplitudes
    return np.asarray(psi, dtype=np.complex128)


def like(template, amplitudes, tag=None):
    """Wrap ``amplitudes`` the same way ``template`` was given."""
    if isinstance(template, StateVector):
        return StateVector(template.tag, amplitudes)
    return amplitudes


def fock_state(basis, occupations) -> StateVector:
    basis = _as_basis(basis)
    amps = np.zeros(basis.dim, dtype=np.complex128)
    amps[basis.index_of(occupations)] = 1.0
    return StateVector(basis.tag, amps)


def mott_state(basis) -> StateVector:
    """Unit-filling Fock state (1, 1, ..., 1); requires M = N."""
    basis = _as_basis(basis)
    if basis.n_bosons != basis.n_sites:
        raise ValueError(f"Mott state needs unit filling, got N={basis.n_sites}, M={basis.n_bosons}")
    return fock_state(basis, (1,) * basis.n_sites)
