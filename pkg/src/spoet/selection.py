"""Data-driven rank selection from eigenvalue or singular-value spectra.

Three selectors: the eigenvalue ratio (for factor counts), the largest
consecutive singular-value gap, and the largest singular-value ratio (both
for the rank of cross-group correlation blocks).  All are scale-invariant
and break ties toward the smallest index.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SelectionResult:
    chosen: int
    criterion_values: np.ndarray
    cap: int


def _as_descending(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ConfigError("expected a 1-d spectrum")
    if np.any(np.diff(values) > 1e-12 * max(1.0, abs(values[0]) if values.size else 1.0)):
        raise ConfigError("spectrum must be sorted in descending order")
    return values


def eigenvalue_ratio_select(eigenvalues, cap: int) -> SelectionResult:
    """``argmax_i lambda_i / lambda_{i+1}`` over ``1 <= i <= cap``.

    Needs ``cap + 1`` positive eigenvalues; if fewer are available, the cap
    is reduced with a warning.
    """
    values = _as_descending(eigenvalues)
    if cap < 1:
        raise ConfigError(f"cap must be >= 1, got {cap}")
    n_pos = int(np.sum(values > 0.0))
    if n_pos < cap + 1:
        if n_pos < 2:
            raise ConfigError("need at least 2 positive eigenvalues")
        warnings.warn(
            f"only {n_pos} positive eigenvalues; reducing cap {cap} -> {n_pos - 1}",
            stacklevel=2,
        )
        cap = n_pos - 1
    ratios = values[:cap] / values[1 : cap + 1]
    chosen = int(np.argmax(ratios)) + 1  # argmax returns the first maximum
    return SelectionResult(chosen=chosen, criterion_values=ratios, cap=cap)


def singular_gap_rank(singular_values, cap: int) -> SelectionResult:
    """``argmax_i (xi_i - xi_{i+1})`` over ``1 <= i <= cap``."""
    values = _as_descending(singular_values)
    if cap < 1:
        raise ConfigError(f"cap must be >= 1, got {cap}")
    if cap > values.size - 1:
        raise ConfigError(f"cap {cap} needs {cap + 1} values, got {values.size}")
    gaps = values[:cap] - values[1 : cap + 1]
    chosen = int(np.argmax(gaps)) + 1
    return SelectionResult(chosen=chosen, criterion_values=gaps, cap=cap)


def singular_ratio_rank(singular_values, cap: int) -> SelectionResult:
    """``argmax_i xi_i / xi_{i+1}`` over ``1 <= i <= cap``.

    Zero values inside the range truncate it with a warning (ratios with a
    zero denominator are undefined).
    """
    values = _as_descending(singular_values)
    if cap < 1:
        raise ConfigError(f"cap must be >= 1, got {cap}")
    n_pos = int(np.sum(values > 0.0))
    if n_pos < cap + 1:
        if n_pos < 2:
            raise ConfigError("need at least 2 positive singular values")
        warnings.warn(
            f"zero singular value inside range; truncating cap {cap} -> {n_pos - 1}",
            stacklevel=2,
        )
        cap = n_pos - 1
    ratios = values[:cap] / values[1 : cap + 1]
    chosen = int(np.argmax(ratios)) + 1
    return SelectionResult(chosen=chosen, criterion_values=ratios, cap=cap)
