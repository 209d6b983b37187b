"""Gross-exposure-constrained minimum variance weights and a weekly backtest.

The optimizer solves ``min w' S w  s.t.  1'w = 1, ||w||_1 <= c`` through the
positive/negative split ``w = w+ - w-`` as a convex QP, using an
operator-splitting (ADMM) iteration with a fixed zero initialization followed
by an exact active-set polish.  The backtester refits the chosen estimators
on a trailing daily window at the start of each calendar week and holds the
weights for one week.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg

from .covariance import descale_covariance, sample_covariance, symmetrize
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    NumericError,
    SpoetError,
)
from .estimators import EstimatorConfig, double_poet, poet, structured_poet
from .panel import BlockLayout, GroupHierarchy, ReturnPanel, aggregate_returns, build_layout
from .spectral import clip_positive_definite
from .thresholding import ThresholdPolicy


@dataclass(frozen=True)
class PortfolioProblem:
    """One constrained minimum-variance instance."""

    covariance: np.ndarray
    exposure_cap: float
    tolerance: float = 1e-8
    max_iterations: int = 50_000

    def __post_init__(self):
        if self.exposure_cap < 1.0:
            raise ConfigError(
                f"exposure cap must be >= 1 (got {self.exposure_cap}); "
                "the budget constraint forces ||w||_1 >= 1"
            )
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")


def _unconstrained_weights(sigma: np.ndarray) -> np.ndarray:
    ones = np.ones(sigma.shape[0])
    try:
        x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(sigma), ones)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"covariance is not positive definite: {exc}")
    return x / (ones @ x)


def _admm_split_qp(
    sigma: np.ndarray, c: float, eps: float, max_iter: int
) -> tuple[np.ndarray, float, float]:
    """OSQP-style ADMM on the split variable ``x = [w+; w-] >= 0``.

    Constraint rows: ``a'x = 1`` (budget, a = [1, -1]), ``b'x <= c`` (gross
    exposure, b = [1, 1]), ``x >= 0``.  Returns the final split iterate and
    its primal/dual residuals.
    """
    p = sigma.shape[0]
    n = 2 * p
    a = np.concatenate([np.ones(p), -np.ones(p)])
    b = np.ones(n)
    q_mat = np.block([[sigma, -sigma], [-sigma, sigma]])

    sig_reg = 1e-6
    rho = 1.0
    alpha = 1.6
    x = np.zeros(n)
    z = np.zeros(n + 2)  # [budget row, exposure row, bound rows]
    y = np.zeros(n + 2)

    def mat_a(v):
        return np.concatenate([[a @ v, b @ v], v])

    def mat_at(u):
        return a * u[0] + b * u[1] + u[2:]

    def refactor(rho):
        kkt = q_mat + (sig_reg + rho) * np.eye(n) + rho * (
            np.outer(a, a) + np.outer(b, b)
        )
        return scipy.linalg.cho_factor(kkt)

    factor = refactor(rho)
    r_prim = r_dual = np.inf
    for it in range(max_iter):
        rhs = sig_reg * x + mat_at(rho * z - y)
        x_hat = scipy.linalg.cho_solve(factor, rhs)
        z_hat = mat_a(x_hat)
        x = alpha * x_hat + (1.0 - alpha) * x
        z_relax = alpha * z_hat + (1.0 - alpha) * z
        v = z_relax + y / rho
        z_new = np.concatenate([[1.0, min(v[1], c)], np.maximum(v[2:], 0.0)])
        y = y + rho * (z_relax - z_new)
        z = z_new

        if (it + 1) % 10 == 0 or it == max_iter - 1:
            ax = mat_a(x)
            r_prim = np.max(np.abs(ax - z))
            r_dual = np.max(np.abs(q_mat @ x + mat_at(y)))
            if r_prim <= eps and r_dual <= eps:
                break
            if (it + 1) % 100 == 0:
                p_scale = max(np.max(np.abs(ax)), np.max(np.abs(z)), 1e-12)
                d_scale = max(
                    np.max(np.abs(q_mat @ x)), np.max(np.abs(mat_at(y))), 1e-12
                )
                ratio = np.sqrt((r_prim / p_scale) / max(r_dual / d_scale, 1e-16))
                if ratio > 5.0 or ratio < 0.2:
                    rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                    factor = refactor(rho)
    return x, r_prim, r_dual


def _polish(
    sigma: np.ndarray, c: float, rough: np.ndarray, kkt_tol: float
) -> np.ndarray | None:
    """Exact equality-constrained solve on the active set implied by ``rough``.

    Returns None when the resulting multipliers or signs violate the KKT
    conditions, in which case the caller keeps the iterative solution.
    """
    p = sigma.shape[0]
    cutoff = 1e-6 * max(1.0, np.max(np.abs(rough)))
    signs = np.where(rough > cutoff, 1.0, np.where(rough < -cutoff, -1.0, 0.0))
    for _ in range(p + 1):
        support = np.flatnonzero(signs != 0.0)
        if support.size == 0:
            return None
        s = signs[support]
        h = sigma[np.ix_(support, support)]
        if np.all(s > 0):
            # long-only case: the two constraints coincide (||w||_1 = 1'w = 1)
            kkt = np.zeros((support.size + 1, support.size + 1))
            kkt[: support.size, : support.size] = h
            kkt[: support.size, -1] = 1.0
            kkt[-1, : support.size] = 1.0
            rhs = np.concatenate([np.zeros(support.size), [1.0]])
        else:
            kkt = np.zeros((support.size + 2, support.size + 2))
            kkt[: support.size, : support.size] = h
            kkt[: support.size, -2] = s
            kkt[: support.size, -1] = 1.0
            kkt[-2, : support.size] = s
            kkt[-1, : support.size] = 1.0
            rhs = np.concatenate([np.zeros(support.size), [1.0, c]])
        try:
            sol = scipy.linalg.solve(kkt, rhs)
        except scipy.linalg.LinAlgError:
            return None
        u = sol[: support.size] * s  # magnitudes
        if np.all(u >= -1e-12):
            break
        # wrong sign guesses drop out of the support
        drop = support[u < -1e-12]
        signs[drop] = 0.0
    else:
        return None

    w = np.zeros(p)
    w[support] = np.maximum(u, 0.0) * s
    grad = sigma @ w
    if np.all(s > 0):
        lam = -float(np.mean(grad[support]))
        mu = 0.0
        stat = np.max(np.abs(grad[support] + lam)) if support.size else 0.0
        zero_ok = np.all(grad + lam >= -kkt_tol)
    else:
        lam = float(sol[-1])
        mu = float(sol[-2])
        if mu < -kkt_tol:
            return None
        mu = max(mu, 0.0)
        stat = np.max(np.abs(grad[support] + lam + mu * s))
        zeros = signs == 0.0
        zero_ok = np.all(np.abs(grad[zeros] + lam) <= mu + kkt_tol)
    if stat > kkt_tol or not zero_ok:
        return None
    return w


def min_variance_weights(problem: PortfolioProblem) -> np.ndarray:
    """Minimum-variance weights under ``1'w = 1`` and ``||w||_1 <= c``.

    When the exposure cap is slack the closed-form unconstrained solution is
    returned (it satisfies the KKT conditions exactly); otherwise the split
    ADMM iterates from zero and an active-set polish refines the answer to
    machine precision when possible.
    """
    sigma = symmetrize(problem.covariance)
    c = float(problem.exposure_cap)
    scale = np.trace(sigma) / sigma.shape[0]
    if scale <= 0:
        raise NumericError("covariance trace must be positive")
    sigma_n = sigma / scale  # weights are invariant to objective scaling

    w_free = _unconstrained_weights(sigma_n)
    if np.sum(np.abs(w_free)) <= c * (1.0 + 1e-12):
        return w_free

    eps = min(problem.tolerance, 1e-8) / 10.0
    x, r_prim, r_dual = _admm_split_qp(sigma_n, c, eps, problem.max_iterations)
    if r_prim > problem.tolerance or r_dual > problem.tolerance:
        raise ConvergenceError(
            f"QP did not reach tolerance {problem.tolerance:g} in "
            f"{problem.max_iterations} iterations "
            f"(primal {r_prim:.2e}, dual {r_dual:.2e})",
            primal_residual=r_prim,
            dual_residual=r_dual,
        )
    rough = x[: sigma.shape[0]] - x[sigma.shape[0] :]
    polished = _polish(sigma_n, c, rough, kkt_tol=1e-7 * max(1.0, np.max(np.abs(sigma_n))))
    if polished is not None:
        return polished
    # keep the iterate but restore the budget exactly; the shift is within
    # the solver tolerance
    rough = rough + (1.0 - rough.sum()) / rough.size
    return rough


def realized_risk(weekly_portfolio_returns) -> float:
    """Root mean square of weekly portfolio returns (no mean subtraction)."""
    returns = np.asarray(weekly_portfolio_returns, dtype=float)
    if returns.size == 0:
        raise ConfigError("realized risk needs at least one return")
    return float(np.sqrt(np.mean(returns**2)))


@dataclass(frozen=True)
class MethodSpec:
    """One estimator entry of a backtest."""

    method: str  # samcov | poet | double-poet | structured-poet
    d: int = 1
    k: int | str = "auto"
    r_l: int | str = "auto"
    k_sq: int | str = "auto"
    shrinkage: str = "soft"
    tau: float | str = "auto"
    sector_block: bool = False
    k_max: int = 10
    r_max: int = 5

    def __post_init__(self):
        if self.method not in ("samcov", "poet", "double-poet", "structured-poet"):
            raise ConfigError(f"unknown method {self.method!r}")

    @property
    def label(self) -> str:
        return f"{self.method}(d={self.d})"


@dataclass(frozen=True)
class BacktestConfig:
    """Rolling weekly backtest settings (window lengths in trading days)."""

    methods: tuple[MethodSpec, ...]
    exposures: tuple[float, ...] = (1.0, 2.0)
    estimation_window: int = 252  # ~12 months of daily data
    tolerance: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(
            self, "exposures", tuple(float(c) for c in self.exposures)
        )
        if self.estimation_window < 2:
            raise ConfigError("estimation window must cover at least 2 days")
        if not self.methods:
            raise ConfigError("backtest needs at least one method")
        if any(c < 1.0 for c in self.exposures):
            raise ConfigError("exposure caps must be >= 1")


@dataclass
class BacktestResult:
    report: pd.DataFrame  # method, k, d, c, period, n_weeks, risk, n_skipped_windows
    weekly_returns: pd.DataFrame  # method, k, d, c, week_start, value
    weights: pd.DataFrame | None  # wide per-week weight rows
    skipped: list[dict]


def _iso_weeks(periods) -> list[tuple[str, list[int]]]:
    """Consecutive ISO-week groups; partial first/last weeks are dropped."""
    groups: list[tuple[str, list[int]]] = []
    key = None
    for idx, label in enumerate(periods):
        date = datetime.date.fromisoformat(label)
        iso = date.isocalendar()
        week = f"{iso[0]}-W{iso[1]:02d}"
        if week != key:
            groups.append((week, []))
            key = week
        groups[-1][1].append(idx)
    if groups and len(groups[0][1]) < 5:
        groups = groups[1:]
    if groups and len(groups[-1][1]) < 5:
        groups = groups[:-1]
    return groups


def _fit_method(
    spec: MethodSpec, window: ReturnPanel, layout: BlockLayout
) -> np.ndarray:
    sectors = None
    if spec.sector_block:
        if layout.sectors is None:
            raise ConfigError(
                f"method {spec.label} wants sector blocking but the membership "
                "file has no complete sector column"
            )
        sectors = layout.sectors
    policy = ThresholdPolicy(shrinkage=spec.shrinkage, tau=spec.tau, sectors=sectors)
    if spec.method == "structured-poet":
        config = EstimatorConfig(
            k=spec.k, r_l=spec.r_l, k_sq=spec.k_sq, d=spec.d,
            threshold=policy, k_max=spec.k_max, r_max=spec.r_max,
        )
        return structured_poet(window, layout, config).total
    if spec.d == 1:
        pilot = sample_covariance(window)
    else:
        pilot = descale_covariance(
            sample_covariance(aggregate_returns(window, spec.d)), spec.d
        )
    if spec.method == "samcov":
        return pilot
    if spec.method == "poet":
        return poet(pilot, spec.k, policy, k_max=spec.k_max).total
    config = EstimatorConfig(
        k=spec.k, r_l=spec.r_l, d=spec.d, threshold=policy,
        k_max=spec.k_max, r_max=spec.r_max,
    )
    return double_poet(pilot, layout, config).total


def backtest(
    daily_panel: ReturnPanel,
    groups: GroupHierarchy | BlockLayout,
    config: BacktestConfig,
    collect_weights: bool = False,
) -> BacktestResult:
    """Weekly-rebalanced out-of-sample risk comparison.

    At the start of each calendar week with a full trailing estimation window,
    every method is refit, weights are solved for every exposure cap, and the
    portfolio's weekly log-return (weights times the week's summed daily
    returns) is recorded.  Estimation or solver failures skip that window for
    the affected method and are reported, not fatal.  Out-of-sample risk per
    calendar year (and over the full span) is the root mean square of the
    weekly returns.
    """
    layout = (
        groups
        if isinstance(groups, BlockLayout)
        else build_layout(daily_panel.asset_ids, groups)
    )
    if layout.n_assets != daily_panel.n_assets:
        raise ConfigError("layout does not match panel assets")
    weeks = _iso_weeks(daily_panel.periods)
    window = config.estimation_window
    eligible = [(wk, idx) for wk, idx in weeks if idx[0] >= window]
    if not eligible:
        raise DataError(
            f"no full estimation window: need more than {window} daily periods "
            f"plus a complete holding week, panel has {daily_panel.n_periods}"
        )

    records: list[dict] = []
    weight_rows: list[dict] = []
    skipped: list[dict] = []
    values = daily_panel.values
    for week_key, idx in eligible:
        start = idx[0]
        week_start = daily_panel.periods[start]
        week_return = values[:, idx].sum(axis=1)
        sub = ReturnPanel(
            asset_ids=daily_panel.asset_ids,
            periods=daily_panel.periods[start - window : start],
            values=values[:, start - window : start],
            frequency_days=1,
        )
        for spec in config.methods:
            try:
                estimate = _fit_method(spec, sub, layout)
                estimate, _ = clip_positive_definite(estimate)
            except (SpoetError, scipy.linalg.LinAlgError) as exc:
                skipped.append(
                    {"method": spec.label, "k": spec.k, "d": spec.d, "c": None,
                     "week": week_key, "reason": f"{type(exc).__name__}: {exc}"}
                )
                continue
            for c in config.exposures:
                try:
                    w = min_variance_weights(
                        PortfolioProblem(estimate, c, tolerance=config.tolerance)
                    )
                except (SpoetError, scipy.linalg.LinAlgError) as exc:
                    skipped.append(
                        {"method": spec.label, "k": spec.k, "d": spec.d, "c": c,
                         "week": week_key, "reason": f"{type(exc).__name__}: {exc}"}
                    )
                    continue
                records.append(
                    {"method": spec.label, "k": str(spec.k), "d": spec.d, "c": c,
                     "week_start": week_start, "value": float(w @ week_return)}
                )
                if collect_weights:
                    row = {"method": spec.label, "k": str(spec.k), "d": spec.d,
                           "c": c, "week_start": week_start}
                    row.update(
                        {aid: float(wi) for aid, wi in zip(layout.asset_ids, w)}
                    )
                    weight_rows.append(row)

    weekly = pd.DataFrame(
        records, columns=["method", "k", "d", "c", "week_start", "value"]
    )
    skip_counts: dict[tuple, int] = {}
    for rec in skipped:
        for c in config.exposures if rec["c"] is None else (rec["c"],):
            key = (rec["method"], str(rec["k"]), rec["d"], c)
            skip_counts[key] = skip_counts.get(key, 0) + 1

    report_rows = []
    if not weekly.empty:
        weekly = weekly.assign(year=weekly["week_start"].str[:4])
        for (method, k, d, c), grp in weekly.groupby(
            ["method", "k", "d", "c"], sort=True
        ):
            periods = [("full", grp)] + [
                (year, sub) for year, sub in grp.groupby("year", sort=True)
            ]
            for period, sub in periods:
                report_rows.append(
                    {"method": method, "k": k, "d": d, "c": c, "period": period,
                     "n_weeks": len(sub),
                     "risk": realized_risk(sub["value"].to_numpy()),
                     "n_skipped_windows": skip_counts.get((method, k, d, c), 0)}
                )
    report = pd.DataFrame(
        report_rows,
        columns=["method", "k", "d", "c", "period", "n_weeks", "risk",
                 "n_skipped_windows"],
    )
    weights_frame = pd.DataFrame(weight_rows) if collect_weights else None
    return BacktestResult(
        report=report,
        weekly_returns=weekly.drop(columns=["year"], errors="ignore"),
        weights=weights_frame,
        skipped=skipped,
    )


def best_k_report(report: pd.DataFrame) -> pd.DataFrame:
    """Report-layer reduction: per (method, d, c, period), the best risk over k."""
    if report.empty:
        return report
    idx = report.groupby(["method", "d", "c", "period"], sort=True)["risk"].idxmin()
    return report.loc[idx].reset_index(drop=True)
