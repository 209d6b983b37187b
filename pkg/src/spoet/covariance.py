"""Pilot estimators: sample covariance, frequency descaling, correlation.

Symmetric matrices are represented as plain ``numpy`` arrays; construction
helpers enforce exact symmetry and finiteness.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError, DegenerateAssetError
from .panel import ReturnPanel


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Return ``(A + A') / 2`` as a new array, validating shape and finiteness."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DataError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise DataError("matrix contains non-finite entries")
    return (matrix + matrix.T) / 2.0


def sample_covariance(panel: ReturnPanel) -> np.ndarray:
    """Mean-centered sample covariance with divisor ``n`` (the period count).

    The divisor is ``n`` rather than ``n - 1``, matching the averaged
    outer-product convention used throughout the estimators.
    """
    T = panel.n_periods
    if T < 2:
        raise DataError(f"sample covariance needs T >= 2 periods, got {T}")
    centered = panel.values - panel.values.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / T
    return symmetrize(cov)


def descale_covariance(cov: np.ndarray, d: int) -> np.ndarray:
    """Divide every entry by ``d``.

    A covariance computed from ``d``-day aggregated returns is amplified by a
    factor of ``d`` relative to the daily scale; dividing by ``d`` restores
    the daily-scale target and yields the standard low-frequency pilot.
    """
    if d < 1:
        raise ConfigError(f"descaling factor d must be >= 1, got {d}")
    return symmetrize(cov) / float(d)


def correlation_from_covariance(
    cov: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Split a covariance into ``(R, D)`` with ``R = D^{-1/2} cov D^{-1/2}``.

    ``D`` is the extracted variance vector; the returned correlation matrix
    has unit diagonal exactly.  Raises :class:`DegenerateAssetError` for any
    asset with non-positive variance (silently dropping it would desynchronize
    membership bookkeeping downstream).
    """
    cov = symmetrize(cov)
    diag = np.diag(cov).copy()
    bad = np.flatnonzero(diag <= 0.0)
    if bad.size:
        raise DegenerateAssetError(int(bad[0]))
    inv_sd = 1.0 / np.sqrt(diag)
    corr = cov * np.outer(inv_sd, inv_sd)
    np.fill_diagonal(corr, 1.0)
    return symmetrize(corr), diag
