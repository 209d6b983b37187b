"""Multi-level factor covariance estimation for global return panels."""

__version__ = "0.1.0"

from .covariance import (
    correlation_from_covariance,
    descale_covariance,
    sample_covariance,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateAssetError,
    NumericError,
    SpoetError,
)
from .estimators import (
    CovarianceDecomposition,
    EstimatorConfig,
    FactorComponent,
    double_poet,
    invert_decomposition,
    poet,
    structured_poet,
)
from .panel import (
    BlockLayout,
    GroupHierarchy,
    ReturnPanel,
    aggregate_returns,
    build_layout,
    load_membership,
    load_panel,
    reorder_by_hierarchy,
)
from .portfolio import (
    BacktestConfig,
    MethodSpec,
    PortfolioProblem,
    backtest,
    best_k_report,
    min_variance_weights,
    realized_risk,
)
from .selection import (
    SelectionResult,
    eigenvalue_ratio_select,
    singular_gap_rank,
    singular_ratio_rank,
)
from .simulation import (
    EstimatorSpec,
    SimConfig,
    TrueModel,
    distort_correlation,
    error_metrics,
    generate_true_model,
    make_hierarchy,
    run_experiment,
    simulate_returns,
)
from .spectral import (
    EigenSystem,
    SingularTriples,
    clip_positive_definite,
    top_k_eigen,
    truncated_svd,
)
from .thresholding import (
    DEFAULT_TAU_GRID,
    ThresholdPolicy,
    adaptive_threshold,
    select_tau,
)
