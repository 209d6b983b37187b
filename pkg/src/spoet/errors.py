"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ``ConfigError`` -> 2 (usage),
``DataError`` -> 3 (bad input data), ``NumericError`` -> 4 (numerical
failure).
"""


class SpoetError(Exception):
    """Base class for all package errors."""


class ConfigError(SpoetError):
    """Invalid configuration or argument values."""


class DataError(SpoetError):
    """Malformed or inconsistent input data (CSV files, memberships)."""


class NumericError(SpoetError):
    """Numerical failure: non-positive-definite matrices, degenerate assets."""


class DegenerateAssetError(NumericError):
    """An asset has zero or negative variance where positivity is required."""

    def __init__(self, asset_index, asset_id=None):
        self.asset_index = asset_index
        self.asset_id = asset_id
        label = f" ({asset_id})" if asset_id is not None else ""
        super().__init__(
            f"asset at index {asset_index}{label} has non-positive variance"
        )


class ConvergenceError(NumericError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, primal_residual=None, dual_residual=None):
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        super().__init__(message)
