"""Synthetic-experiment harness: data generation, distortion, metrics, sweeps.

The generator builds a two-level factor model with a sparse idiosyncratic
covariance.  Asynchronous trading hours are emulated by distorting the
cross-continent correlations as a function of the sampling window ``d``: data
observed at frequency ``d`` carry the correlation ``rho_h`` with
``h = 0.5 / d``, so coarser sampling is closer to the synchronized truth.
Estimators are scored against the undistorted covariance.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
import scipy.linalg

from .covariance import (
    correlation_from_covariance,
    descale_covariance,
    sample_covariance,
)
from .errors import ConfigError, NumericError, SpoetError
from .estimators import EstimatorConfig, double_poet, poet, structured_poet
from .panel import BlockLayout, GroupHierarchy, ReturnPanel, aggregate_returns, build_layout
from .spectral import top_k_eigen
from .thresholding import ThresholdPolicy

MAX_PD_ATTEMPTS = 1000


def business_days(start: str, count: int) -> tuple[str, ...]:
    """ISO labels for ``count`` consecutive business days from ``start``."""
    days = np.busday_offset(np.datetime64(start), np.arange(count), roll="forward")
    return tuple(np.datetime_as_string(days, unit="D"))


def worker_count() -> int:
    """Parallelism cap: the SPOET_THREADS env var, defaulting to logical cores."""
    env = os.environ.get("SPOET_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SimConfig:
    """Design of one synthetic experiment.

    ``p = L * p_l`` assets split into ``S`` continents of ``L / S`` countries
    each.  Exactly one of the two grids should have more than one value: a
    multi-valued ``T_grid`` sweeps the sample length (estimators run at every
    ``d`` in ``d_grid``), otherwise ``d_grid`` is swept at fixed ``T``.
    """

    p: int
    S: int
    L: int
    p_l: int
    k: int
    r_l: int
    T_grid: tuple[int, ...] = (200,)
    d_grid: tuple[int, ...] = (1, 5)
    beta: float = 0.75
    replications: int = 200
    master_seed: int = 0
    diagonal_idio: bool = False
    h_numerator: float = 0.5  # relative time offset at d=1; h = h_numerator / d

    def __post_init__(self):
        object.__setattr__(self, "T_grid", tuple(int(t) for t in self.T_grid))
        object.__setattr__(self, "d_grid", tuple(int(d) for d in self.d_grid))
        if self.L % self.S != 0:
            raise ConfigError(f"L={self.L} must be a multiple of S={self.S}")
        if self.p != self.L * self.p_l:
            raise ConfigError(
                f"inconsistent sizes: p={self.p} != L*p_l={self.L * self.p_l}"
            )
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if min(self.T_grid, default=0) < 2 or min(self.d_grid, default=0) < 1:
            raise ConfigError("T grid values must be >= 2 and d values >= 1")

    @property
    def grid_var(self) -> str:
        return "d" if len(self.T_grid) == 1 and len(self.d_grid) > 1 else "T"

    @property
    def r_total(self) -> int:
        return self.L * self.r_l


def make_hierarchy(config: SimConfig) -> tuple[GroupHierarchy, BlockLayout]:
    """Synthetic continent/country memberships in canonical block order."""
    asset_ids = []
    continent_of = {}
    country_of = {}
    countries_per_continent = config.L // config.S
    for s in range(config.S):
        continent = f"C{s + 1}"
        for l in range(countries_per_continent):
            country = f"{continent}-K{l + 1:02d}"
            for i in range(config.p_l):
                asset = f"{country}-A{i + 1:03d}"
                asset_ids.append(asset)
                continent_of[asset] = continent
                country_of[asset] = country
    groups = GroupHierarchy(continent_of=continent_of, country_of=country_of)
    return groups, build_layout(asset_ids, groups)


@dataclass(frozen=True)
class TrueModel:
    """Simulation ground truth.

    ``B_h`` and ``Rh`` are populated by :func:`distort_correlation`; draws go
    through ``B_h`` when present so the observed panel embeds the
    asynchronicity distortion while ``Sigma`` stays the undistorted target.
    """

    B: np.ndarray  # p x k global loadings
    Lambda: np.ndarray  # p x r block-diagonal local loadings
    Sigma_u: np.ndarray
    Sigma: np.ndarray
    R0: np.ndarray
    D: np.ndarray  # diagonal of Sigma (vector)
    layout: BlockLayout
    k: int
    r_l: int
    B_h: np.ndarray | None = None
    Rh: np.ndarray | None = None
    distortion_d: int | None = None

    @property
    def p(self) -> int:
        return self.Sigma.shape[0]


def generate_true_model(config: SimConfig, seed) -> TrueModel:
    """Draw loadings and the sparse idiosyncratic covariance.

    The idiosyncratic part is ``diag(D_u) + pi pi' - diag(pi^2)`` with a
    sparse ``pi``; it is redrawn until positive definite (at most
    ``MAX_PD_ATTEMPTS`` times).  All draws come from one generator in a fixed
    order, so a seed fully determines the model.
    """
    rng = np.random.default_rng(seed)
    p, k = config.p, config.k
    _, layout = make_hierarchy(config)

    mu_b = rng.uniform(-0.5, 0.5, size=k)
    B = mu_b + rng.standard_normal((p, k))

    Lambda = np.zeros((p, config.r_total))
    col = 0
    for sl in layout.country_slices:
        mu_l = rng.uniform(-0.3, 0.3, size=config.r_l)
        block = mu_l + rng.standard_normal((sl.stop - sl.start, config.r_l))
        Lambda[sl, col : col + config.r_l] = block
        col += config.r_l

    prob = 0.5 / (np.sqrt(p) * np.log(p))
    for attempt in range(MAX_PD_ATTEMPTS):
        d_u = rng.uniform(0.5, 1.5, size=p)
        if config.diagonal_idio:
            sigma_u = np.diag(d_u)
            break
        mask = rng.random(p) < prob
        pi = np.where(mask, rng.standard_normal(p), 0.0)
        sigma_u = np.diag(d_u) + np.outer(pi, pi) - np.diag(pi**2)
        if scipy.linalg.eigvalsh(sigma_u)[0] > 0.0:
            break
    else:
        raise NumericError(
            f"no positive definite idiosyncratic draw in {MAX_PD_ATTEMPTS} attempts"
        )

    sigma = B @ B.T + Lambda @ Lambda.T + sigma_u
    sigma = (sigma + sigma.T) / 2.0
    r0, diag = correlation_from_covariance(sigma)
    return TrueModel(
        B=B,
        Lambda=Lambda,
        Sigma_u=sigma_u,
        Sigma=sigma,
        R0=r0,
        D=diag,
        layout=layout,
        k=k,
        r_l=config.r_l,
    )


def distort_correlation(
    model: TrueModel, d: int, beta: float, h_numerator: float = 0.5
) -> TrueModel:
    """Apply the asynchronicity distortion for sampling window ``d``.

    Cross-continent correlations move away from the truth by
    ``0.5 * h**beta`` (sign preserved) with ``h = h_numerator / d``;
    within-continent entries are untouched.  The distorted global loadings
    ``B_h`` are the scaled top-``k`` eigenvectors of the distorted covariance
    minus the local and idiosyncratic parts.
    """
    if d < 1:
        raise ConfigError(f"d must be >= 1, got {d}")
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    h = h_numerator / d
    bump = 0.5 * h**beta
    rh = model.R0.copy()
    cross = np.ones((model.p, model.p), dtype=bool)
    for sl in model.layout.continent_slices:
        cross[sl, sl] = False
    rh[cross] = np.sign(model.R0[cross]) * (np.abs(model.R0[cross]) + bump)
    if np.any(np.abs(rh[cross]) >= 1.0):
        warnings.warn(
            "distorted cross-continent correlation reaches |rho| >= 1 "
            f"(max {np.abs(rh[cross]).max():.4f})",
            stacklevel=2,
        )

    root_d = np.sqrt(model.D)
    sigma_g = (
        rh * np.outer(root_d, root_d)
        - model.Lambda @ model.Lambda.T
        - model.Sigma_u
    )
    top = top_k_eigen(sigma_g, model.k)
    if np.any(top.eigenvalues <= 0.0):
        raise NumericError(
            "distorted global component has a non-positive leading eigenvalue"
        )
    b_h = top.eigenvectors * np.sqrt(top.eigenvalues)
    return replace(model, B_h=b_h, Rh=rh, distortion_d=d)


def simulate_returns(model: TrueModel, T: int, seed) -> ReturnPanel:
    """Draw a daily panel ``y_t = B_h G_t + Lambda F_t + u_t``.

    Factors and errors are serially independent Gaussians; ``u_t`` uses a
    one-time Cholesky factor of the idiosyncratic covariance.  Draw order is
    fixed (G, F, u) so a seed fully determines the panel.  Falls back to the
    undistorted ``B`` when no distortion has been applied.
    """
    if T < 2:
        raise ConfigError(f"T must be >= 2, got {T}")
    rng = np.random.default_rng(seed)
    loadings = model.B if model.B_h is None else model.B_h
    r = model.Lambda.shape[1]
    try:
        chol = scipy.linalg.cholesky(model.Sigma_u, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"idiosyncratic covariance is not positive definite: {exc}")
    g = rng.standard_normal((model.k, T))
    f = rng.standard_normal((r, T))
    shocks = chol @ rng.standard_normal((model.p, T))
    values = loadings @ g + model.Lambda @ f + shocks
    return ReturnPanel(
        asset_ids=model.layout.asset_ids,
        periods=business_days("2001-01-01", T),
        values=values,
        frequency_days=1,
    )


def truth_context(truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Precompute ``(inverse, inverse square root)`` of a PD truth matrix."""
    values, vectors = scipy.linalg.eigh((truth + truth.T) / 2.0)
    if values[0] <= 0.0:
        raise NumericError("truth covariance is not positive definite")
    inv = (vectors / values) @ vectors.T
    isqrt = (vectors / np.sqrt(values)) @ vectors.T
    return inv, isqrt


def error_metrics(
    estimate: np.ndarray,
    truth: np.ndarray,
    truth_inverse: np.ndarray | None = None,
    truth_isqrt: np.ndarray | None = None,
) -> dict:
    """Evaluation norms for one estimate.

    ``relative_frobenius`` is ``p^{-1/2} || S^{-1/2} E S^{-1/2} - I ||_F``,
    ``max_norm`` the entrywise maximum of the difference, and
    ``inverse_spectral`` the operator norm of the precision difference (the
    estimate is eigenvalue-clipped first when not positive definite, flagged
    via ``repaired``).
    """
    p = truth.shape[0]
    if estimate.shape != truth.shape:
        raise ConfigError("estimate/truth dimension mismatch")
    if truth_inverse is None or truth_isqrt is None:
        truth_inverse, truth_isqrt = truth_context(truth)
    middle = truth_isqrt @ estimate @ truth_isqrt - np.eye(p)
    rel_frob = np.linalg.norm(middle, "fro") / np.sqrt(p)
    max_norm = np.max(np.abs(estimate - truth))

    sym = (estimate + estimate.T) / 2.0
    values, vectors = scipy.linalg.eigh(sym)
    floor = 1e-8 * np.trace(sym) / p
    repaired = bool(values[0] <= floor)
    clipped = np.maximum(values, floor)
    est_inv = (vectors / clipped) @ vectors.T
    diff = est_inv - truth_inverse
    inverse_spectral = np.max(np.abs(scipy.linalg.eigvalsh((diff + diff.T) / 2.0)))
    return {
        "relative_frobenius": float(rel_frob),
        "max_norm": float(max_norm),
        "inverse_spectral": float(inverse_spectral),
        "repaired": repaired,
    }


@dataclass(frozen=True)
class EstimatorSpec:
    """One entry of the experiment menu.

    ``d`` pins the sampling window; ``None`` follows the grid value in
    ``d``-sweeps.  Counts default to data-driven selection.
    """

    method: str  # samcov | poet | double-poet | structured-poet
    d: int | None = None
    k: int | str = "auto"
    r_l: int | str = "auto"
    k_sq: int | str = "auto"
    shrinkage: str = "soft"
    tau: float | str = "auto"
    k_max: int = 10
    r_max: int = 10

    def __post_init__(self):
        if self.method not in ("samcov", "poet", "double-poet", "structured-poet"):
            raise ConfigError(f"unknown estimator method {self.method!r}")

    def label(self, d: int) -> str:
        return f"{self.method}(d={d})"


def run_estimator(
    spec: EstimatorSpec, d: int, daily_panel: ReturnPanel, layout: BlockLayout
) -> np.ndarray:
    """Fit one estimator at window ``d`` and return the estimated covariance."""
    policy = ThresholdPolicy(shrinkage=spec.shrinkage, tau=spec.tau)
    if spec.method == "structured-poet":
        config = EstimatorConfig(
            k=spec.k, r_l=spec.r_l, k_sq=spec.k_sq, d=d,
            threshold=policy, k_max=spec.k_max, r_max=spec.r_max,
        )
        return structured_poet(daily_panel, layout, config).total
    if d == 1:
        pilot = sample_covariance(daily_panel)
    else:
        pilot = descale_covariance(
            sample_covariance(aggregate_returns(daily_panel, d)), d
        )
    if spec.method == "samcov":
        return pilot
    if spec.method == "poet":
        return poet(pilot, spec.k, policy, k_max=spec.k_max).total
    config = EstimatorConfig(
        k=spec.k, r_l=spec.r_l, d=d, threshold=policy,
        k_max=spec.k_max, r_max=spec.r_max,
    )
    return double_poet(pilot, layout, config).total


def default_menu(config: SimConfig) -> tuple[EstimatorSpec, ...]:
    """All four methods; in T-sweeps each runs at every window in ``d_grid``."""
    methods = ("samcov", "poet", "double-poet", "structured-poet")
    if config.grid_var == "d":
        return tuple(EstimatorSpec(method=m) for m in methods)
    return tuple(
        EstimatorSpec(method=m, d=d) for m in methods for d in config.d_grid
    )


def _cell_seed(config: SimConfig, grid_value: int, rep: int, *extra) -> np.random.SeedSequence:
    tag = 0 if config.grid_var == "T" else 1
    return np.random.SeedSequence(
        entropy=(int(config.master_seed), tag, int(grid_value), int(rep), *extra)
    )


def _run_cell(
    config: SimConfig, menu, grid_value: int, rep: int
) -> list[dict]:
    """One (grid point, replication): fresh model, panels per window, metrics."""
    T = grid_value if config.grid_var == "T" else config.T_grid[0]
    model = generate_true_model(config, _cell_seed(config, grid_value, rep, 0))
    truth_inv, truth_isqrt = truth_context(model.Sigma)

    needed_d = sorted(
        {
            spec.d if spec.d is not None else (
                grid_value if config.grid_var == "d" else 1
            )
            for spec in menu
        }
    )
    panels = {}
    for d in needed_d:
        distorted = distort_correlation(model, d, config.beta, config.h_numerator)
        panels[d] = simulate_returns(
            distorted, T, _cell_seed(config, grid_value, rep, 1, d)
        )

    rows = []
    for spec in menu:
        d = spec.d if spec.d is not None else (
            grid_value if config.grid_var == "d" else 1
        )
        base = {
            "grid_var": config.grid_var,
            "grid_value": grid_value,
            "replication": rep,
            "estimator": spec.label(d),
            "d": d,
            "d_dgp": d,
        }
        try:
            estimate = run_estimator(spec, d, panels[d], model.layout)
            metrics = error_metrics(estimate, model.Sigma, truth_inv, truth_isqrt)
        except (SpoetError, scipy.linalg.LinAlgError) as exc:
            for metric in ("relative_frobenius", "max_norm", "inverse_spectral"):
                rows.append({**base, "metric": metric, "value": np.nan,
                             "error": f"{type(exc).__name__}: {exc}"})
            continue
        for metric in ("relative_frobenius", "max_norm", "inverse_spectral"):
            rows.append({**base, "metric": metric, "value": metrics[metric],
                         "error": ""})
    return rows


def run_experiment(
    config: SimConfig,
    menu=None,
    n_threads: int | None = None,
    grid_values=None,
) -> pd.DataFrame:
    """Sweep the grid; long-format results, one row per metric value.

    Replications run in parallel worker threads (capped by ``SPOET_THREADS``);
    each cell owns an independent seeded generator, so results do not depend
    on scheduling.  Estimator failures are recorded in the ``error`` column
    rather than aborting the sweep.  ``grid_values`` restricts the sweep to a
    subset of grid points without changing their seeds (used for resumption).
    """
    if menu is None:
        menu = default_menu(config)
    menu = tuple(menu)
    grid = config.T_grid if config.grid_var == "T" else config.d_grid
    if grid_values is not None:
        unknown = [v for v in grid_values if v not in grid]
        if unknown:
            raise ConfigError(f"grid values {unknown} not in the configured grid")
        grid = tuple(grid_values)
    cells = [
        (grid_value, rep)
        for grid_value in grid
        for rep in range(config.replications)
    ]
    n_threads = n_threads or worker_count()
    # one process-wide filter for the sweep: per-cell selection warnings are
    # expected noise, and toggling filters inside worker threads would race
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if n_threads > 1 and len(cells) > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                futures = [
                    pool.submit(_run_cell, config, menu, gv, rep)
                    for gv, rep in cells
                ]
                results = [f.result() for f in futures]
        else:
            results = [_run_cell(config, menu, gv, rep) for gv, rep in cells]
    rows = [row for cell_rows in results for row in cell_rows]
    return pd.DataFrame(
        rows,
        columns=["grid_var", "grid_value", "replication", "estimator", "d",
                 "d_dgp", "metric", "value", "error"],
    )
