"""Dynamical Lie algebra closure and block reachability.

Elements are handled through the real coordinates of their Hermitian parts
``H`` (the algebra element being ``iH``) with the identity component
dropped, so a closure of dimension ``d**2 - 1`` is the full ``su(d)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import as_matrix, commutator, coordinatize, decoordinatize

__all__ = ["LieClosure", "BlockStructure", "generate_lie_algebra", "block_reachability", "BLOCK_HYPOTHESIS_TOL"]

BLOCK_HYPOTHESIS_TOL = 1e-10


@dataclass(frozen=True)
class LieClosure:
    """Result of :func:`generate_lie_algebra`.

    Attributes
    ----------
    generators : tuple of ndarray
        Anti-Hermitian seeds ``iB`` and ``iC`` with the identity removed.
    basis : tuple of ndarray
        Hilbert-Schmidt orthonormal anti-Hermitian traceless matrices spanning
        the closure found.
    dimension : int
        Number of basis elements; a lower bound when ``converged`` is false.
    depth_reached : int
        Bracket sweeps performed.
    converged : bool
        True when a full sweep added no direction.
    """

    generators: tuple
    basis: tuple
    dimension: int
    depth_reached: int
    converged: bool
    hilbert_dim: int

    @property
    def full_su(self) -> bool:
        return self.dimension == self.hilbert_dim**2 - 1


@dataclass(frozen=True)
class BlockStructure:
    """Orthogonal projector onto an invariant subspace."""

    P0: np.ndarray

    def __post_init__(self):
        p = as_matrix(self.P0)
        if not np.allclose(p, p.conj().T, atol=1e-12):
            raise ValueError("projector must be Hermitian")
        if np.linalg.norm(p @ p - p) > 1e-12 * max(1.0, np.linalg.norm(p)):
            raise ValueError("projector must be idempotent")
        object.__setattr__(self, "P0", p)

    @property
    def d0(self) -> int:
        return int(round(np.trace(self.P0).real))

    def range_basis(self) -> np.ndarray:
        """Orthonormal columns spanning ``Ran(P0)``."""
        w, v = np.linalg.eigh(self.P0)
        return v[:, w > 0.5]


def _traceless_coords(h: np.ndarray) -> np.ndarray:
    return coordinatize(h)[:-1]


def _hermitian_from_coords(v: np.ndarray) -> np.ndarray:
    return decoordinatize(np.append(v, 0.0)).matrix


def _orthogonalize(v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    # two passes of classical Gram-Schmidt against the current basis
    for _ in range(2):
        for b in basis:
            v = v - (b @ v) * b
    return v


def generate_lie_algebra(B, C, max_depth: int | None = None, rank_tol: float = 1e-10) -> LieClosure:
    """Span of ``{iB, iC}`` closed under commutators.

    Parameters
    ----------
    B, C : array_like
        Hermitian operators of equal dimension.
    max_depth : int, optional
        Maximum number of bracket sweeps, default ``2 d**2``.
    rank_tol : float
        A candidate joins the basis when its norm and its component
        orthogonal to the basis both exceed ``rank_tol`` (relative to the
        seed scale for the seeds; brackets of unit elements are compared
        in absolute terms so that roundoff from commuting pairs is never
        normalized up to a spurious direction).

    Returns
    -------
    LieClosure
    """
    b, c = as_matrix(B), as_matrix(C)
    if b.shape != c.shape:
        raise ValueError("B and C must have the same dimension")
    d = b.shape[0]
    if max_depth is None:
        max_depth = 2 * d * d
    seeds = [_traceless_coords(b), _traceless_coords(c)]

    basis: list[np.ndarray] = []

    def admit(v: np.ndarray, scale: float = 1.0) -> bool:
        norm = np.linalg.norm(v)
        if norm <= rank_tol * scale:
            return False
        r = _orthogonalize(v / norm, basis)
        rn = np.linalg.norm(r)
        if rn <= rank_tol:
            return False
        basis.append(r / rn)
        return True

    seed_scale = max(np.linalg.norm(v) for v in seeds)
    for v in seeds:
        admit(v, seed_scale)
    mats = [_hermitian_from_coords(v) for v in basis]
    frontier = list(range(len(basis)))
    depth = 0
    converged = False
    full = d * d - 1
    while depth < max_depth:
        if not frontier or len(basis) == full:
            converged = True
            break
        depth += 1
        new = []
        for i in frontier:
            for j in range(len(mats)):
                if j == i or (j in frontier and j < i):
                    continue
                # [iH1, iH2] = i (-i [H1, H2])
                h = -1j * commutator(mats[i], mats[j])
                if admit(_traceless_coords(h)):
                    mats.append(_hermitian_from_coords(basis[-1]))
                    new.append(len(basis) - 1)
        frontier = new
    else:
        converged = not frontier or len(basis) == full

    return LieClosure(
        generators=tuple(1j * _hermitian_from_coords(v) for v in seeds),
        basis=tuple(1j * m for m in mats),
        dimension=len(basis),
        depth_reached=depth,
        converged=converged,
        hilbert_dim=d,
    )


def block_reachability(B, C, P0, max_depth: int | None = None, rank_tol: float = 1e-10) -> dict:
    """Controllability of ``B, C`` compressed to an invariant subspace.

    Returns a dict with ``verdict`` one of ``"reachable within block"``,
    ``"not reachable within block"`` or ``"not applicable"``, plus the
    hypothesis residuals and, when applicable, the compressed closure.
    """
    block = P0 if isinstance(P0, BlockStructure) else BlockStructure(P0)
    b, c, p = as_matrix(B), as_matrix(C), block.P0
    res_b = float(np.linalg.norm(commutator(b, p)))
    res_c = float(np.linalg.norm(commutator(c, p)))
    out = {"commutator_B": res_b, "commutator_C": res_c, "d0": block.d0}
    if res_b >= BLOCK_HYPOTHESIS_TOL or res_c >= BLOCK_HYPOTHESIS_TOL:
        out["verdict"] = "not applicable"
        return out
    v = block.range_basis()
    b0 = v.conj().T @ b @ v
    c0 = v.conj().T @ c @ v
    closure = generate_lie_algebra(b0, c0, max_depth=max_depth, rank_tol=rank_tol)
    out.update(
        compressed_B=b0,
        compressed_C=c0,
        closure=closure,
        dimension=closure.dimension,
        full_su=closure.full_su,
        verdict="reachable within block" if closure.full_su else "not reachable within block",
    )
    return out
