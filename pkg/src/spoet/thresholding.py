"""Adaptive entry-dependent thresholding of idiosyncratic covariances.

The entry ``(i, j)`` threshold is ``tau * sqrt(s_ii * s_jj)`` so a single
constant ``tau`` acts on the correlation scale.  ``tau`` may be given
explicitly or selected as the smallest grid value whose thresholded matrix is
positive definite.  A sector mask replaces thresholding entirely: entries
across different sectors are zeroed, entries within a sector are kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .covariance import symmetrize
from .errors import ConfigError, NumericError

#: Default search grid for automatic tau selection.
DEFAULT_TAU_GRID = tuple(np.round(np.arange(0.0, 2.0001, 0.05), 10))

#: Relative floor defining "positive definite" in the tau search:
#: the minimum eigenvalue must exceed PD_FLOOR_REL * trace / p.
PD_FLOOR_REL = 1e-8


@dataclass(frozen=True)
class ThresholdPolicy:
    """How to threshold an idiosyncratic covariance estimate.

    Parameters
    ----------
    shrinkage : {"soft", "hard"}
        Soft shrinkage moves surviving off-diagonals toward zero by the
        threshold; hard shrinkage keeps them verbatim.
    tau : float or "auto"
        Correlation-scale threshold constant; "auto" selects the smallest
        grid value giving a positive definite result.
    sectors : sequence of str, optional
        Per-asset sector labels aligned with the matrix.  When set, the
        sector mask is applied instead of tau-thresholding.
    """

    shrinkage: str = "soft"
    tau: float | str = "auto"
    sectors: Sequence[str] | None = None

    def __post_init__(self):
        if self.shrinkage not in ("soft", "hard"):
            raise ConfigError(f"unknown shrinkage {self.shrinkage!r}")
        if isinstance(self.tau, str):
            if self.tau != "auto":
                raise ConfigError(f"tau must be a number or 'auto', got {self.tau!r}")
        elif self.tau < 0:
            raise ConfigError(f"tau must be nonnegative, got {self.tau}")
        if self.sectors is not None:
            object.__setattr__(self, "sectors", tuple(self.sectors))

    def restrict(self, block: slice) -> "ThresholdPolicy":
        """Policy for a sub-block of the asset range (slices sector labels)."""
        sectors = self.sectors[block] if self.sectors is not None else None
        return ThresholdPolicy(shrinkage=self.shrinkage, tau=self.tau, sectors=sectors)


@dataclass(frozen=True)
class TauSelection:
    """Outcome of the tau grid search."""

    tau: float
    achieved_pd: bool
    min_eigenvalues: np.ndarray  # one per grid point actually evaluated


def _check_diagonal(residual: np.ndarray) -> np.ndarray:
    """Diagonal of the residual, with numerical zeros clamped to 0.

    A complete factor fit can leave an exactly-zero residual whose diagonal
    carries rounding noise of either sign; only genuinely negative variances
    are errors.
    """
    diag = np.diag(residual).copy()
    tol = 1e-12 * max(1.0, float(np.max(np.abs(residual))))
    if np.any(diag < -tol):
        raise NumericError(
            f"residual diagonal must be nonnegative "
            f"(min {diag.min():.3e} at index {int(np.argmin(diag))})"
        )
    diag[diag < 0.0] = 0.0
    return diag


def _sector_mask_matrix(residual: np.ndarray, sectors: Sequence[str]) -> np.ndarray:
    if len(sectors) != residual.shape[0]:
        raise ConfigError(
            f"sector mask needs {residual.shape[0]} labels, got {len(sectors)}"
        )
    labels = np.asarray(sectors, dtype=object)
    same = labels[:, None] == labels[None, :]
    return symmetrize(np.where(same, residual, 0.0))


def threshold_at(residual: np.ndarray, tau: float, shrinkage: str) -> np.ndarray:
    """Threshold with an explicit constant; diagonal kept verbatim."""
    residual = symmetrize(residual)
    diag = _check_diagonal(residual)
    scale = np.sqrt(np.outer(diag, diag))
    tau_ij = tau * scale
    keep = np.abs(residual) >= tau_ij
    if shrinkage == "soft":
        shrunk = np.sign(residual) * np.maximum(np.abs(residual) - tau_ij, 0.0)
    else:
        shrunk = residual
    out = np.where(keep, shrunk, 0.0)
    np.fill_diagonal(out, diag)
    return symmetrize(out)


def select_tau(
    residual: np.ndarray,
    policy: ThresholdPolicy,
    grid: Sequence[float] = DEFAULT_TAU_GRID,
) -> TauSelection:
    """Smallest grid value whose thresholded matrix is positive definite.

    Positive definite means the minimum eigenvalue exceeds
    ``PD_FLOOR_REL * trace / p`` (scale-invariant).  If no grid value
    qualifies, the grid maximum is returned with ``achieved_pd=False``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("tau grid must be nonempty")
    if np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ConfigError("tau grid must be ascending and nonnegative")
    residual = symmetrize(residual)
    _check_diagonal(residual)
    floor = PD_FLOOR_REL * np.trace(residual) / residual.shape[0]
    min_eigs = []
    for tau in grid:
        thresholded = threshold_at(residual, float(tau), policy.shrinkage)
        lam_min = scipy.linalg.eigvalsh(thresholded)[0]
        min_eigs.append(lam_min)
        if lam_min > floor:
            return TauSelection(float(tau), True, np.array(min_eigs))
    return TauSelection(float(grid[-1]), False, np.array(min_eigs))


def adaptive_threshold(
    residual: np.ndarray,
    policy: ThresholdPolicy,
    grid: Sequence[float] = DEFAULT_TAU_GRID,
) -> tuple[np.ndarray, dict]:
    """Apply the policy to a residual covariance.

    Returns ``(thresholded, info)`` where ``info`` records the tau actually
    used (or the sector-mask mode) and whether the auto search reached
    positive definiteness.
    """
    residual = symmetrize(residual)
    _check_diagonal(residual)
    if policy.sectors is not None:
        return _sector_mask_matrix(residual, policy.sectors), {"mode": "sector-mask"}
    if policy.tau == "auto":
        selection = select_tau(residual, policy, grid)
        out = threshold_at(residual, selection.tau, policy.shrinkage)
        return out, {
            "mode": "auto",
            "tau": selection.tau,
            "achieved_pd": selection.achieved_pd,
        }
    out = threshold_at(residual, float(policy.tau), policy.shrinkage)
    return out, {"mode": "fixed", "tau": float(policy.tau)}
