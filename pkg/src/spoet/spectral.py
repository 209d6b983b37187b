"""Deterministic symmetric eigendecomposition and truncated SVD.

Both primitives apply a sign canonicalization (the largest-magnitude entry of
each eigenvector / left-singular vector is made positive, ties broken by the
lowest index) so that repeated runs produce identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError
from .covariance import symmetrize


@dataclass(frozen=True)
class EigenSystem:
    """Top eigenpairs of a symmetric matrix, eigenvalues descending."""

    eigenvalues: np.ndarray  # (m,)
    eigenvectors: np.ndarray  # (p, m), orthonormal columns

    @property
    def rank(self) -> int:
        return self.eigenvalues.shape[0]

    def component(self) -> np.ndarray:
        """Dense ``V diag(lambda) V'`` reconstruction."""
        if self.rank == 0:
            p = self.eigenvectors.shape[0]
            return np.zeros((p, p))
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


@dataclass(frozen=True)
class SingularTriples:
    """Top singular triples of a rectangular matrix, values descending."""

    singular_values: np.ndarray  # (m,)
    left: np.ndarray  # (rows, m)
    right: np.ndarray  # (cols, m)

    @property
    def rank(self) -> int:
        return self.singular_values.shape[0]

    def component(self) -> np.ndarray:
        """Dense rank-``m`` reconstruction ``sum_i xi_i u_i w_i'``."""
        if self.rank == 0:
            return np.zeros((self.left.shape[0], self.right.shape[0]))
        return (self.left * self.singular_values) @ self.right.T


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    """Signs that make each column's largest-magnitude entry positive."""
    if vectors.shape[1] == 0:
        return np.ones(0)
    anchor = np.argmax(np.abs(vectors), axis=0)  # first maximal index
    signs = np.sign(vectors[anchor, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def top_k_eigen(matrix: np.ndarray, m: int) -> EigenSystem:
    """Top-``m`` eigenpairs of the symmetrized input under the sign canon.

    ``m = 0`` returns an empty system.  For repeated eigenvalues any
    orthonormal basis of the eigenspace may be returned; compare projectors,
    not vectors, in that case.
    """
    sym = symmetrize(matrix)
    p = sym.shape[0]
    if not 0 <= m <= p:
        raise ConfigError(f"need 0 <= m <= {p}, got m={m}")
    if m == 0:
        return EigenSystem(np.zeros(0), np.zeros((p, 0)))
    values, vectors = scipy.linalg.eigh(sym)
    order = np.argsort(values)[::-1][:m]
    values = values[order]
    vectors = vectors[:, order]
    vectors = vectors * _canonical_signs(vectors)
    return EigenSystem(eigenvalues=values, eigenvectors=vectors)


def full_eigenvalues(matrix: np.ndarray) -> np.ndarray:
    """All eigenvalues of the symmetrized input, descending."""
    return scipy.linalg.eigvalsh(symmetrize(matrix))[::-1]


def truncated_svd(matrix: np.ndarray, m: int) -> SingularTriples:
    """Top-``m`` singular triples; the Frobenius-optimal rank-``m`` fit.

    Left vectors carry the sign canon; right vectors are compensated so the
    reconstruction is unchanged.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ConfigError("truncated_svd expects a 2-d matrix")
    cap = min(matrix.shape)
    if not 0 <= m <= cap:
        raise ConfigError(f"need 0 <= m <= min(rows, cols) = {cap}, got m={m}")
    if m == 0:
        return SingularTriples(
            np.zeros(0), np.zeros((matrix.shape[0], 0)), np.zeros((matrix.shape[1], 0))
        )
    u, s, vt = scipy.linalg.svd(matrix, full_matrices=False)
    u, s, w = u[:, :m], s[:m], vt[:m].T
    signs = _canonical_signs(u)
    return SingularTriples(singular_values=s, left=u * signs, right=w * signs)


def clip_positive_definite(
    matrix: np.ndarray, floor_rel: float = 1e-8
) -> tuple[np.ndarray, bool]:
    """Clip eigenvalues below ``floor_rel * trace / p`` up to that floor.

    Returns ``(repaired_matrix, repaired_flag)``; the flag is False when the
    input already clears the floor (the input is then passed through
    symmetrized but otherwise untouched).
    """
    sym = symmetrize(matrix)
    p = sym.shape[0]
    floor = floor_rel * np.trace(sym) / p
    values, vectors = scipy.linalg.eigh(sym)
    if values[0] > floor:
        return sym, False
    clipped = np.maximum(values, floor)
    return symmetrize((vectors * clipped) @ vectors.T), True
