"""Hermitian operators, Hilbert-Schmidt geometry and real coordinates.

Every superoperator in the package is stored as a dense real matrix acting
on the coordinates of Hermitian operators in a fixed orthonormal basis
(normalized generalized Gell-Mann matrices followed by ``I/sqrt(n)``).
Because the basis is Hermitian and orthonormal, any Hermiticity-preserving
map becomes a real matrix and the Hilbert-Schmidt adjoint becomes the
transpose.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "HermitianOperator",
    "OperatorBasis",
    "Superoperator",
    "ArrayLike",
    "as_matrix",
    "gell_mann_basis",
    "hs_inner",
    "coordinatize",
    "decoordinatize",
    "commutator",
    "commutator_superop",
    "superop_adjoint",
    "superop_from_sandwiches",
    "is_hermitian",
    "ground_state",
    "pauli",
    "site_operator",
    "ising_problem",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "IDENTITY_2",
]

HERMITICITY_TOL = 1e-8

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


class HermitianOperator:
    """Immutable Hermitian matrix.

    The input is symmetrized as ``(X + X^dagger)/2``.  An anti-Hermitian part
    larger than ``1e-8`` (max-abs entry) is treated as a user error.
    """

    __slots__ = ("_m",)

    def __init__(self, entries, *, atol: float = HERMITICITY_TOL):
        m = np.array(entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix has non-finite entries")
        anti = 0.5 * (m - m.conj().T)
        if anti.size and np.max(np.abs(anti)) > atol:
            raise ValueError(
                f"matrix is not Hermitian: anti-Hermitian part {np.max(np.abs(anti)):.3e} > {atol:g}"
            )
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        self._m = m

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self._m if dtype is None else self._m.astype(dtype)

    def __repr__(self) -> str:
        return f"HermitianOperator(dim={self.dim})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, HermitianOperator):
            return NotImplemented
        return self._m.shape == other._m.shape and bool(np.array_equal(self._m, other._m))

    def __hash__(self):
        return hash((self._m.shape, self._m.tobytes()))

    def __add__(self, other):
        return HermitianOperator(self._m + as_matrix(other))

    __radd__ = __add__

    def __sub__(self, other):
        return HermitianOperator(self._m - as_matrix(other))

    def __rsub__(self, other):
        return HermitianOperator(as_matrix(other) - self._m)

    def __neg__(self):
        return HermitianOperator(-self._m)

    def __mul__(self, scalar):
        if not np.isrealobj(scalar):
            raise TypeError("only real scalars keep an operator Hermitian")
        return HermitianOperator(float(scalar) * self._m)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def kron(self, other) -> "HermitianOperator":
        return HermitianOperator(np.kron(self._m, as_matrix(other)))

    def trace(self) -> float:
        return float(np.trace(self._m).real)

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self._m)

    def norm(self) -> float:
        """Hilbert-Schmidt (Frobenius) norm."""
        return float(np.linalg.norm(self._m))


ArrayLike = Union[HermitianOperator, np.ndarray, Sequence]


def as_matrix(x: ArrayLike) -> np.ndarray:
    """Complex ndarray view of an operator-like input."""
    if isinstance(x, HermitianOperator):
        return x.matrix
    return np.asarray(x, dtype=complex)


def is_hermitian(x: ArrayLike, atol: float = HERMITICITY_TOL) -> bool:
    m = as_matrix(x)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and bool(np.allclose(m, m.conj().T, atol=atol, rtol=0))


def commutator(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    return a @ b - b @ a


def hs_inner(a: ArrayLike, b: ArrayLike) -> float:
    """Hilbert-Schmidt product ``Tr(A B)`` of two Hermitian operators."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    # Tr(A^dagger B) with A Hermitian
    return float(np.vdot(a, b).real)


@dataclass(frozen=True, eq=False)
class OperatorBasis:
    """Orthonormal Hermitian basis of the ``dim x dim`` Hermitian matrices.

    Attributes
    ----------
    dim : int
        Hilbert-space dimension ``n``.
    elements : tuple of ndarray
        ``n**2`` Hermitian matrices with ``Tr(F_i F_j) = delta_ij``.  The
        last element is ``I/sqrt(n)``.
    transform : ndarray
        ``(n**2, n**2)`` complex matrix whose columns are the row-major
        flattenings of the elements.
    """

    dim: int
    elements: tuple
    transform: np.ndarray

    def __len__(self) -> int:
        return len(self.elements)

    def operators(self) -> list[HermitianOperator]:
        return [HermitianOperator(f) for f in self.elements]

    @property
    def identity_index(self) -> int:
        return len(self.elements) - 1


@lru_cache(maxsize=None)
def gell_mann_basis(n: int) -> OperatorBasis:
    """Normalized generalized Gell-Mann basis plus ``I/sqrt(n)``.

    Ordering: symmetric off-diagonal pairs ``(j, k)`` with ``j < k`` in
    lexicographic order, then the antisymmetric ones in the same order, then
    the diagonal ones of increasing size, then the identity.  For ``n = 2``
    this is ``(sx, sy, sz, I)/sqrt(2)``.
    """
    if n < 1:
        raise ValueError("dimension must be positive")
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    elems = []
    r = 1 / np.sqrt(2)
    for j, k in pairs:
        f = np.zeros((n, n), dtype=complex)
        f[j, k] = f[k, j] = r
        elems.append(f)
    for j, k in pairs:
        f = np.zeros((n, n), dtype=complex)
        f[j, k] = -1j * r
        f[k, j] = 1j * r
        elems.append(f)
    for l in range(1, n):
        d = np.zeros(n)
        d[:l] = 1.0
        d[l] = -l
        elems.append(np.diag(d / np.sqrt(l * (l + 1))).astype(complex))
    elems.append(np.eye(n, dtype=complex) / np.sqrt(n))
    for f in elems:
        f.setflags(write=False)
    t = np.stack([f.reshape(-1) for f in elems], axis=1)
    t.setflags(write=False)
    return OperatorBasis(n, tuple(elems), t)


def _basis_for(dim: int, basis: OperatorBasis | None) -> OperatorBasis:
    if basis is None:
        return gell_mann_basis(dim)
    if basis.dim != dim:
        raise ValueError(f"dimension mismatch: operator {dim} vs basis {basis.dim}")
    return basis


def coordinatize(x: ArrayLike, basis: OperatorBasis | None = None) -> np.ndarray:
    """Real coordinates ``x_j = Tr(F_j X)``.

    A stack of operators with shape ``(..., n, n)`` maps to ``(..., n**2)``.
    """
    m = as_matrix(x)
    n = m.shape[-1]
    b = _basis_for(n, basis)
    flat = m.reshape(m.shape[:-2] + (n * n,))
    return (flat @ b.transform.conj()).real


def decoordinatize(v, basis: OperatorBasis | None = None) -> HermitianOperator:
    """Inverse of :func:`coordinatize` for a single vector."""
    return HermitianOperator(_decoordinatize_array(np.asarray(v, dtype=float), basis))


def _decoordinatize_array(v: np.ndarray, basis: OperatorBasis | None = None) -> np.ndarray:
    """Operator matrices from coordinates; works on stacks ``(..., n**2)``."""
    n = int(round(np.sqrt(v.shape[-1])))
    if n * n != v.shape[-1]:
        raise ValueError(f"coordinate length {v.shape[-1]} is not a square")
    b = _basis_for(n, basis)
    return (v @ b.transform.T).reshape(v.shape[:-1] + (n, n))


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Real matrix of a Hermiticity-preserving linear map in basis coordinates."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if np.iscomplexobj(m):
            if np.max(np.abs(m.imag), initial=0.0) > 1e-10:
                raise ValueError("superoperator matrix must be real")
            m = m.real
        m = np.array(m, dtype=float)
        if m.shape != (self.dim**2, self.dim**2):
            raise ValueError(f"expected shape {(self.dim**2,) * 2}, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def adjoint(self) -> "Superoperator":
        return Superoperator(self.dim, self.matrix.T)

    def apply(self, x: ArrayLike) -> HermitianOperator:
        return decoordinatize(self.matrix @ coordinatize(x))

    def __add__(self, other: "Superoperator") -> "Superoperator":
        return Superoperator(self.dim, self.matrix + other.matrix)

    def __sub__(self, other: "Superoperator") -> "Superoperator":
        return Superoperator(self.dim, self.matrix - other.matrix)

    def __mul__(self, scalar: float) -> "Superoperator":
        return Superoperator(self.dim, float(scalar) * self.matrix)

    __rmul__ = __mul__


def superop_from_sandwiches(terms: Iterable[tuple[complex, np.ndarray, np.ndarray]], dim: int) -> np.ndarray:
    """Coordinatized real matrix of ``X -> sum_k c_k A_k X B_k``.

    The caller is responsible for the map being Hermiticity preserving; the
    discarded imaginary part is then zero up to rounding.
    """
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    n2 = dim * dim
    m = np.zeros((n2, n2), dtype=complex)
    for c, a, b in terms:
        m += c * np.kron(a, b.T)
    t = gell_mann_basis(dim).transform
    return (t.conj().T @ m @ t).real


def commutator_superop(x: ArrayLike, basis: OperatorBasis | None = None) -> Superoperator:
    """Coordinatized ``K_X = -i[X, .]``; real and antisymmetric."""
    m = as_matrix(x)
    n = m.shape[0]
    _basis_for(n, basis)
    eye = np.eye(n, dtype=complex)
    mat = superop_from_sandwiches([(-1j, m, eye), (1j, eye, m)], n)
    # exact antisymmetry, removing rounding asymmetry
    return Superoperator(n, 0.5 * (mat - mat.T))


def superop_adjoint(op: Superoperator) -> Superoperator:
    """Hilbert-Schmidt adjoint, the transpose in real coordinates."""
    return op.adjoint()


def ground_state(h: ArrayLike, *, gap_tol: float = 1e-9) -> np.ndarray:
    """Projector onto the nondegenerate ground state of ``h``."""
    w, v = np.linalg.eigh(as_matrix(h))
    if len(w) > 1 and w[1] - w[0] < gap_tol:
        raise ValueError(f"ground state is degenerate (gap {w[1] - w[0]:.3e})")
    g = v[:, 0]
    return np.outer(g, g.conj())


def pauli(label: str) -> np.ndarray:
    return {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z, "i": IDENTITY_2}[label.lower()]


def site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Single-site operator embedded into an ``n_sites`` qubit register."""
    out = np.eye(1, dtype=complex)
    for k in range(n_sites):
        out = np.kron(out, op if k == site else IDENTITY_2)
    return out


def ising_problem(n: int, h: Sequence[float] | None = None, couplings: Sequence = (), driver: str = "transverse"):
    """Expand the Ising shorthand into ``(B, C)``.

    ``C = sum_i h_i Z_i + sum_(i,j) J_ij Z_i Z_j`` and ``B = sum_i X_i``.
    """
    if driver != "transverse":
        raise ValueError(f"unknown driver {driver!r}")
    if n < 1:
        raise ValueError("n must be positive")
    h = np.zeros(n) if h is None else np.asarray(h, dtype=float)
    if h.shape != (n,):
        raise ValueError(f"h must have {n} entries")
    dim = 2**n
    c = np.zeros((dim, dim), dtype=complex)
    zs = [site_operator(SIGMA_Z, i, n) for i in range(n)]
    for i in range(n):
        c += h[i] * zs[i]
    for i, j, jij in couplings:
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ValueError(f"invalid coupling pair ({i}, {j})")
        c += float(jij) * zs[i] @ zs[j]
    b = sum(site_operator(SIGMA_X, i, n) for i in range(n))
    return HermitianOperator(b), HermitianOperator(c)
