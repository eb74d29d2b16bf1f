"""Loschmidt-echo simulations of the 1-D Bose-Hubbard model by exact diagonalization."""

__version__ = "0.1.0"

from .basis import FockBasis, LatticeSpec, enumerate_basis
from .operators import (
    BhmParams,
    DiagonalOperator,
    DiagonalUnitary,
    HermitianOperator,
    assemble_hamiltonian,
    build_hopping,
    build_interaction,
    build_tilt,
    phase_imprint,
)
from .states import StateVector, fock_state, mott_state
from .spectra import SpectrumSlice, ground_state, low_spectrum, spacing_ratio
from .propagator import PropagatorConfig, evolve
from .echo import EchoCurve, Scenario, SequenceSpec, echo_curve, make_scenario, sequence_echo
from .analysis import (
    CriticalScan,
    CriticalScanEstimator,
    DecayFit,
    FeshbachParams,
    GaussianDecayRegressor,
    QuarticDecayRegressor,
    critical_scan,
    fit_decay,
    perturbative_prediction,
    scattering_length,
    variance_oracle,
)

__all__ = [
    "BhmParams",
    "CriticalScan",
    "CriticalScanEstimator",
    "DecayFit",
    "DiagonalOperator",
    "DiagonalUnitary",
    "EchoCurve",
    "FeshbachParams",
    "FockBasis",
    "GaussianDecayRegressor",
    "HermitianOperator",
    "LatticeSpec",
    "PropagatorConfig",
    "QuarticDecayRegressor",
    "Scenario",
    "SequenceSpec",
    "SpectrumSlice",
    "StateVector",
    "assemble_hamiltonian",
    "build_hopping",
    "build_interaction",
    "build_tilt",
    "critical_scan",
    "echo_curve",
    "enumerate_basis",
    "evolve",
    "fit_decay",
    "fock_state",
    "ground_state",
    "low_spectrum",
    "make_scenario",
    "mott_state",
    "perturbative_prediction",
    "phase_imprint",
    "scattering_length",
    "sequence_echo",
    "spacing_ratio",
    "variance_oracle",
]
