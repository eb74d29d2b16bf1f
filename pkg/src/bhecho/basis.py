"""Fixed-particle-number Fock basis on an open chain."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from math import comb

import numpy as np

DEFAULT_MAX_DIM = 200_000


class BasisError(ValueError):
    """Raised for invalid lattice specs or oversized bases."""


class StateLookupError(KeyError):
    """Raised when a configuration is not part of a basis."""


@dataclass(frozen=True)
class LatticeSpec:
    """N sites, M bosons on a 1-D open chain with unit lattice spacing."""

    n_sites: int
    n_bosons: int

    geometry = "1-D open chain"
    lattice_spacing = 1.0

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise BasisError(f"n_sites must be a positive integer, got {self.n_sites!r}")
        if int(self.n_bosons) != self.n_bosons or self.n_bosons < 0:
            raise BasisError(f"n_bosons must be a non-negative integer, got {self.n_bosons!r}")

    @property
    def bonds(self) -> list[tuple[int, int]]:
        return [(i, i + 1) for i in range(self.n_sites - 1)]

    @property
    def dimension(self) -> int:
        return comb(self.n_sites + self.n_bosons - 1, self.n_bosons)


def _descending_compositions(n_sites, n_bosons):
    # first site most significant, largest occupation first
    if n_sites == 1:
        yield (n_bosons,)
        return
    for k in range(n_bosons, -1, -1):
        for rest in _descending_compositions(n_sites - 1, n_bosons - k):
            yield (k,) + rest


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Ordered occupation configurations with a bidirectional index map.

    States are in strictly descending lexicographic order. Each state is
    encoded as an integer in base ``M + 1`` (first site most significant), so
    the order of the codes is the order of the states and lookups are a
    binary search over the reversed code array.
    """

    spec: LatticeSpec
    occupations: np.ndarray = field(repr=False)
    _codes: np.ndarray = field(repr=False)

    @property
    def tag(self) -> tuple[int, int]:
        return (self.spec.n_sites, self.spec.n_bosons)

    @property
    def n_sites(self) -> int:
        return self.spec.n_sites

    @property
    def n_bosons(self) -> int:
        return self.spec.n_bosons

    @property
    def dim(self) -> int:
        return self.occupations.shape[0]

    def __len__(self):
        return self.dim

    def __repr__(self):
        return f"FockBasis(n_sites={self.n_sites}, n_bosons={self.n_bosons}, dim={self.dim})"

    @property
    def states(self) -> list[tuple[int, ...]]:
        return [tuple(int(n) for n in row) for row in self.occupations]

    def encode(self, occupations) -> np.ndarray:
        occ = np.atleast_2d(np.asarray(occupations, dtype=np.int64))
        weights = (self.n_bosons + 1) ** np.arange(self.n_sites - 1, -1, -1, dtype=np.int64)
        return occ @ weights

    def lookup(self, occupations) -> np.ndarray:
        """Vectorized index lookup for rows of occupations known to be valid."""
        codes = self.encode(occupations)
        # _codes is descending; search the negated (ascending) array
        return np.searchsorted(-self._codes, -codes)

    def index_of(self, state) -> int:
        occ = np.asarray(state, dtype=np.int64)
        if occ.shape != (self.n_sites,):
            raise StateLookupError(f"state {tuple(state)} has wrong site count for {self!r}")
        if np.any(occ < 0) or int(occ.sum()) != self.n_bosons:
            raise StateLookupError(f"state {tuple(state)} is not in {self!r}")
        return int(self.lookup(occ)[0])

    def state_at(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.dim:
            raise IndexError(f"index {index} out of range for {self!r}")
        return tuple(int(n) for n in self.occupations[index])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"n{j}" for j in range(self.n_sites)])
        writer.writerows(self.occupations.tolist())
        return buf.getvalue()


def enumerate_basis(spec: LatticeSpec | tuple[int, int], max_dim: int = DEFAULT_MAX_DIM) -> FockBasis:
    """Build the basis for ``spec``; refuses dimensions above ``max_dim``."""
    if not isinstance(spec, LatticeSpec):
        spec = LatticeSpec(*spec)
    dim = spec.dimension
    if dim > max_dim:
        raise BasisError(
            f"basis ({spec.n_sites} sites, {spec.n_bosons} bosons) has dimension {dim} > cap {max_dim}"
        )
    occ = np.fromiter(
        (n for state in _descending_compositions(spec.n_sites, spec.n_bosons) for n in state),
        dtype=np.int64,
        count=dim * spec.n_sites,
    ).reshape(dim, spec.n_sites)
    occ.setflags(write=False)
    basis = FockBasis(spec, occ, np.empty(0, dtype=np.int64))
    codes = basis.encode(occ)
    codes.setflags(write=False)
    object.__setattr__(basis, "_codes", codes)
    return basis
