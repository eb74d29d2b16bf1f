"""Sparse operators of the Bose-Hubbard chain: hopping, interaction, tilt, imprint."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from numbers import Number

import numpy as np
import scipy.sparse as sp

from .basis import FockBasis, LatticeSpec, enumerate_basis

HERMITIAN_TOL = 1e-14
UNITARY_TOL = 1e-12


class CompositionError(ValueError):
    """Operators or states defined on different bases were combined."""


@dataclass(frozen=True)
class BhmParams:
    """Energies in units of U (hbar = 1). F is the tilt per site, m*g*d for gravity."""

    J: float = 1.0
    U: float = 1.0
    F: float = 0.0

    def __post_init__(self):
        for name in ("J", "U", "F"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def _check_tags(a, b):
    if a.tag != b.tag:
        raise CompositionError(f"basis mismatch: {a.tag} vs {b.tag}")


class HermitianOperator:
    """Complex CSR matrix acting on a Fock basis identified by ``tag``.

    Hermiticity is verified when the operator is created; arithmetic that
    can only preserve it (real scaling, sums) skips the check.
    """

    __slots__ = ("matrix", "tag")

    def __init__(self, matrix, tag, check=True):
        m = sp.csr_matrix(matrix, dtype=np.complex128)
        m.sum_duplicates()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got {m.shape}")
        if check:
            diff = abs(m - m.getH())
            err = diff.max() if diff.nnz else 0.0
            if err > HERMITIAN_TOL:
                raise ValueError(f"operator is not Hermitian (max |A - A^H| = {err:.3e})")
        self.matrix = m
        self.tag = tuple(tag)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, vec):
        return self.matrix @ vec

    def __neg__(self):
        return HermitianOperator(-self.matrix, self.tag, check=False)

    def __mul__(self, scalar):
        if not isinstance(scalar, Number) or np.iscomplexobj(scalar) and np.imag(scalar) != 0:
            return NotImplemented
        return HermitianOperator(float(np.real(scalar)) * self.matrix, self.tag, check=False)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, DiagonalOperator):
            other = other.as_hermitian()
        if not isinstance(other, HermitianOperator):
            return NotImplemented
        _check_tags(self, other)
        return HermitianOperator(self.matrix + other.matrix, self.tag, check=False)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def max_abs(self) -> float:
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def norm_bound(self) -> float:
        """Row-sum bound on the spectral radius."""
        if not self.matrix.nnz:
            return 0.0
        return float(np.max(np.asarray(abs(self.matrix).sum(axis=1))))

    def expectation(self, psi) -> float:
        psi = np.asarray(psi)
        return float(np.real(np.vdot(psi, self.matrix @ psi)))

    def to_coo_text(self) -> str:
        coo = self.matrix.tocoo()
        lines = ["# row col re im"]
        for r, c, v in zip(coo.row, coo.col, coo.data):
            lines.append(f"{r} {c} {v.real:.17g} {v.imag:.17g}")
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return f"HermitianOperator(dim={self.dim}, nnz={self.matrix.nnz}, tag={self.tag})"


class DiagonalOperator:
    """Real diagonal operator in the Fock basis."""

    __slots__ = ("values", "tag")

    def __init__(self, values, tag):
        values = np.asarray(values, dtype=np.float64)
        values.setflags(write=False)
        self.values = values
        self.tag = tuple(tag)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __matmul__(self, vec):
        vec = np.asarray(vec)
        if vec.ndim == 1:
            return self.values * vec
        return self.values[:, None] * vec

    def __neg__(self):
        return DiagonalOperator(-self.values, self.tag)

    def __mul__(self, scalar):
        if not isinstance(scalar, Number):
            return NotImplemented
        return DiagonalOperator(float(scalar) * self.values, self.tag)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, DiagonalOperator):
            _check_tags(self, other)
            return DiagonalOperator(self.values + other.values, self.tag)
        if isinstance(other, HermitianOperator):
            return other + self
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def as_hermitian(self) -> HermitianOperator:
        return HermitianOperator(sp.diags(self.values, format="csr"), self.tag, check=False)

    def expectation(self, psi) -> float:
        psi = np.asarray(psi)
        return float(np.dot(self.values, np.abs(psi) ** 2))

    def __repr__(self):
        return f"DiagonalOperator(dim={self.dim}, tag={self.tag})"


class DiagonalUnitary:
    """Diagonal unitary with unit-modulus entries."""

    __slots__ = ("values", "tag")

    def __init__(self, values, tag):
        values = np.asarray(values, dtype=np.complex128)
        if values.size and np.max(np.abs(np.abs(values) - 1.0)) > UNITARY_TOL:
            raise ValueError("diagonal unitary entries must have unit modulus")
        values.setflags(write=False)
        self.values = values
        self.tag = tuple(tag)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __matmul__(self, vec):
        return self.values * np.asarray(vec)

    def adjoint(self) -> "DiagonalUnitary":
        return DiagonalUnitary(np.conj(self.values), self.tag)

    def conjugate(self, op):
        """Return ``P op P^dagger``."""
        _check_tags(self, op)
        if isinstance(op, DiagonalOperator):
            # |u_k|^2 = 1 leaves real diagonals untouched
            return DiagonalOperator(op.values, op.tag)
        coo = op.matrix.tocoo()
        data = self.values[coo.row] * coo.data * np.conj(self.values[coo.col])
        m = sp.csr_matrix((data, (coo.row, coo.col)), shape=coo.shape)
        return HermitianOperator(m, op.tag, check=False)


def _as_basis(basis) -> FockBasis:
    if isinstance(basis, FockBasis):
        return basis
    return get_basis(*tuple(basis))


@lru_cache(maxsize=32)
def get_basis(n_sites: int, n_bosons: int) -> FockBasis:
    """Cached basis for ``(n_sites, n_bosons)``."""
    return enumerate_basis(LatticeSpec(n_sites, n_bosons))


def build_hopping(basis) -> HermitianOperator:
    """T = sum over bonds and both directions of a_i^dagger a_j (no coefficient)."""
    basis = _as_basis(basis)
    occ = basis.occupations
    rows, cols, vals = [], [], []
    src = np.arange(basis.dim)
    for i, j in basis.spec.bonds:
        for dst_site, src_site in ((i, j), (j, i)):
            ok = occ[:, src_site] > 0
            if not np.any(ok):
                continue
            moved = occ[ok].copy()
            amp = np.sqrt(moved[:, src_site] * (moved[:, dst_site] + 1.0))
            moved[:, src_site] -= 1
            moved[:, dst_site] += 1
            rows.append(basis.lookup(moved))
            cols.append(src[ok])
            vals.append(amp)
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.empty(0, dtype=np.int64)
        v = np.empty(0)
    m = sp.csr_matrix((v.astype(np.complex128), (r, c)), shape=(basis.dim, basis.dim))
    return HermitianOperator(m, basis.tag)


def build_interaction(basis) -> DiagonalOperator:
    """Diagonal sum_j n_j (n_j - 1), without a factor 1/2."""
    basis = _as_basis(basis)
    occ = basis.occupations
    return DiagonalOperator((occ * (occ - 1)).sum(axis=1), basis.tag)


def build_tilt(basis) -> DiagonalOperator:
    """Diagonal sum_j j n_j with 0-based site index j."""
    basis = _as_basis(basis)
    return DiagonalOperator(basis.occupations @ np.arange(basis.n_sites), basis.tag)


@dataclass(frozen=True)
class OperatorSet:
    basis: FockBasis
    hopping: HermitianOperator
    interaction: DiagonalOperator
    tilt: DiagonalOperator

    @property
    def tag(self):
        return self.basis.tag

    def hamiltonian(self, J=0.0, U=0.0, F=0.0) -> HermitianOperator:
        return combine(self.hopping, self.interaction, self.tilt, J=J, U=U, F=F)


@lru_cache(maxsize=16)
def _cached_operator_set(n_sites, n_bosons):
    basis = get_basis(n_sites, n_bosons)
    return OperatorSet(basis, build_hopping(basis), build_interaction(basis), build_tilt(basis))


def operator_set(basis) -> OperatorSet:
    """Hopping, interaction and tilt for a basis, built once per (N, M)."""
    return _cached_operator_set(*_as_basis(basis).tag)


def combine(hopping, interaction, tilt, J=0.0, U=0.0, F=0.0) -> HermitianOperator:
    """-J*T + U*D_int + F*D_tilt with exact coefficients."""
    _check_tags(hopping, interaction)
    _check_tags(hopping, tilt)
    diag = U * interaction.values + F * tilt.values
    m = (-J) * hopping.matrix + sp.diags(diag.astype(np.complex128), format="csr")
    return HermitianOperator(m, hopping.tag, check=False)


def assemble_hamiltonian(basis, params: BhmParams | None = None, **kw) -> HermitianOperator:
    """H = -J T + U sum n(n-1) + F sum j n_j on ``basis``.

    ``params`` may be omitted in favour of ``J=``, ``U=``, ``F=`` keywords.
    """
    if params is None:
        params = BhmParams(**kw)
    elif kw:
        raise TypeError("pass either params or keyword energies, not both")
    return operator_set(basis).hamiltonian(params.J, params.U, params.F)


def phase_imprint(basis, phase: float) -> DiagonalUnitary:
    """exp(-i * phase * sum_j j n_j); phase = pi flips the sign of the hopping."""
    if not np.isfinite(phase):
        raise ValueError("phase must be finite")
    tilt = operator_set(basis).tilt
    return DiagonalUnitary(np.exp(-1j * phase * tilt.values), tilt.tag)
