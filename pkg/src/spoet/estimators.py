"""Multi-level factor covariance estimators and structured precision inversion.

Three estimators share one output type:

* ``poet`` -- single-level: top-k principal components of a pilot covariance
  plus adaptive thresholding of the orthogonal complement.
* ``double_poet`` -- two-level: global principal components, then per-country
  principal components on the residual diagonal blocks, then thresholding.
* ``structured_poet`` -- per-continent ``double_poet`` on full-frequency data,
  low-rank fits of the cross-continent low-frequency correlation blocks, and a
  final re-eigendecomposition of the assembled global part.

``invert_decomposition`` computes the precision matrix by nested
Sherman-Morrison-Woodbury folds instead of dense inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np
import scipy.linalg

from .covariance import (
    correlation_from_covariance,
    sample_covariance,
    symmetrize,
)
from .errors import ConfigError, NumericError
from .panel import (
    BlockLayout,
    GroupHierarchy,
    ReturnPanel,
    aggregate_returns,
    build_layout,
)
from .selection import (
    SelectionResult,
    eigenvalue_ratio_select,
    singular_ratio_rank,
)
from .spectral import (
    EigenSystem,
    clip_positive_definite,
    full_eigenvalues,
    top_k_eigen,
    truncated_svd,
)
from .thresholding import ThresholdPolicy, adaptive_threshold

#: Relative eigenvalue floor used by PD repair (times trace / p).
PD_FLOOR_REL = 1e-8


@dataclass(frozen=True)
class FactorComponent:
    """Low-rank term ``V diag(lambda) V'`` living on one index block.

    ``start`` is the offset of the block within the full covariance; the
    global component always has ``start = 0`` and spans all assets.
    """

    eigenvalues: np.ndarray  # (m,) descending
    vectors: np.ndarray  # (n, m) orthonormal columns
    start: int = 0

    @property
    def rank(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def stop(self) -> int:
        return self.start + self.vectors.shape[0]

    def block(self) -> np.ndarray:
        """Dense reconstruction on the component's own block."""
        n = self.vectors.shape[0]
        if self.rank == 0:
            return np.zeros((n, n))
        return (self.vectors * self.eigenvalues) @ self.vectors.T

    def embed(self, p: int) -> np.ndarray:
        """Dense ``p x p`` matrix with the component placed at its offset."""
        out = np.zeros((p, p))
        out[self.start : self.stop, self.start : self.stop] = self.block()
        return out

    @staticmethod
    def from_eigen(system: EigenSystem, start: int = 0) -> "FactorComponent":
        return FactorComponent(
            eigenvalues=system.eigenvalues, vectors=system.eigenvectors, start=start
        )

    @staticmethod
    def empty(n: int, start: int = 0) -> "FactorComponent":
        return FactorComponent(np.zeros(0), np.zeros((n, 0)), start)


@dataclass(frozen=True)
class CovarianceDecomposition:
    """Estimated covariance split into global + local + idiosyncratic parts."""

    global_component: FactorComponent
    local_components: tuple[FactorComponent, ...]
    idiosyncratic: np.ndarray
    total: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.idiosyncratic.shape[0]

    def global_dense(self) -> np.ndarray:
        return self.global_component.embed(self.p)

    def local_dense(self) -> np.ndarray:
        out = np.zeros((self.p, self.p))
        for comp in self.local_components:
            out[comp.start : comp.stop, comp.start : comp.stop] += comp.block()
        return out

    @staticmethod
    def assemble(
        global_component: FactorComponent,
        local_components: tuple[FactorComponent, ...],
        idiosyncratic: np.ndarray,
        meta: dict,
    ) -> "CovarianceDecomposition":
        p = idiosyncratic.shape[0]
        total = global_component.embed(p) + idiosyncratic
        for comp in local_components:
            total[comp.start : comp.stop, comp.start : comp.stop] += comp.block()
        return CovarianceDecomposition(
            global_component=global_component,
            local_components=local_components,
            idiosyncratic=symmetrize(idiosyncratic),
            total=symmetrize(total),
            meta=meta,
        )


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs shared by the estimator family.

    ``k`` counts global factors, ``r_l`` local factors per country (an int
    applies to every country; a mapping pins individual countries), ``k_sq``
    the rank of each cross-continent correlation block.  Any of them may be
    "auto".  ``d`` is the low-frequency window in trading days.
    """

    k: int | str = "auto"
    r_l: int | str | Mapping[str, int] = "auto"
    k_sq: int | str | Mapping[str, int] = "auto"
    d: int = 1
    threshold: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    pd_repair: bool = False
    k_max: int = 10
    r_max: int = 10

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"frequency window d must be >= 1, got {self.d}")
        if isinstance(self.k, str) and self.k != "auto":
            raise ConfigError(f"k must be a count or 'auto', got {self.k!r}")
        if isinstance(self.k, int) and self.k < 0:
            raise ConfigError(f"k must be nonnegative, got {self.k}")
        if isinstance(self.k_sq, int) and isinstance(self.k, int):
            if self.k_sq > self.k:
                raise ConfigError(
                    f"cross-continent rank k_sq={self.k_sq} cannot exceed k={self.k}"
                )
        if self.k_max < 1 or self.r_max < 1:
            raise ConfigError("k_max and r_max must be >= 1")

    def r_for(self, country: str) -> int | str:
        if isinstance(self.r_l, (int, str)):
            return self.r_l
        try:
            return self.r_l[country]
        except KeyError:
            raise ConfigError(f"no local factor count for country {country!r}")

    def k_sq_for(self, s: str, q: str) -> int | str:
        if isinstance(self.k_sq, (int, str)):
            return self.k_sq
        key = f"{s}|{q}"
        alt = f"{q}|{s}"
        if key in self.k_sq:
            return self.k_sq[key]
        if alt in self.k_sq:
            return self.k_sq[alt]
        raise ConfigError(f"no rank for continent pair {key!r}")


def _selection_info(result: SelectionResult) -> dict:
    return {
        "chosen": result.chosen,
        "criterion_values": [float(v) for v in result.criterion_values],
        "cap": result.cap,
    }


def _resolve_count(spectrum: np.ndarray, requested, cap: int, label: str):
    """Turn an explicit count or "auto" into a concrete one (with diagnostics)."""
    if requested == "auto":
        usable_cap = min(cap, spectrum.size - 1)
        if usable_cap < 1:
            raise ConfigError(f"cannot auto-select {label}: spectrum too short")
        result = eigenvalue_ratio_select(spectrum, usable_cap)
        return result.chosen, _selection_info(result)
    return int(requested), None


def poet(
    pilot_cov: np.ndarray,
    k: int | str,
    policy: ThresholdPolicy,
    k_max: int = 10,
) -> CovarianceDecomposition:
    """Single-level estimator: rank-``k`` principal fit plus thresholding."""
    pilot = symmetrize(pilot_cov)
    p = pilot.shape[0]
    spectrum = full_eigenvalues(pilot)
    k, k_info = _resolve_count(spectrum, k, k_max, "k")
    if k > p:
        raise ConfigError(f"k={k} exceeds dimension p={p}")
    global_comp = FactorComponent.from_eigen(top_k_eigen(pilot, k))
    residual = pilot - global_comp.block()
    idio, tau_info = adaptive_threshold(residual, policy)
    meta = {"method": "poet", "p": p, "k": k, "k_selection": k_info, "tau": tau_info}
    return CovarianceDecomposition.assemble(global_comp, (), idio, meta)


def _double_poet_core(
    pilot: np.ndarray,
    country_labels: tuple[str, ...],
    country_slices: tuple[slice, ...],
    config: EstimatorConfig,
    policy: ThresholdPolicy,
    offset: int = 0,
) -> tuple[FactorComponent, list[FactorComponent], np.ndarray, dict]:
    """Run the two-level fit on one pilot block; offsets index the full panel."""
    p = pilot.shape[0]
    spectrum = full_eigenvalues(pilot)
    k, k_info = _resolve_count(spectrum, config.k, config.k_max, "k")
    if k > p:
        raise ConfigError(f"k={k} exceeds block dimension {p}")
    global_comp = FactorComponent.from_eigen(top_k_eigen(pilot, k), start=offset)
    residual = pilot - global_comp.block()

    locals_: list[FactorComponent] = []
    r_chosen: dict[str, int] = {}
    r_info: dict[str, dict] = {}
    for label, sl in zip(country_labels, country_slices):
        block = residual[sl, sl]
        p_l = block.shape[0]
        requested = config.r_for(label)
        if requested == "auto":
            block_spectrum = full_eigenvalues(block)
            r_l, info = _resolve_count(
                block_spectrum, "auto", min(config.r_max, p_l - 1), f"r[{label}]"
            )
            r_info[label] = info
        else:
            r_l = int(requested)
        if r_l > p_l:
            raise ConfigError(
                f"r_l={r_l} exceeds country block size {p_l} for {label!r}"
            )
        locals_.append(
            FactorComponent.from_eigen(top_k_eigen(block, r_l), start=offset + sl.start)
        )
        r_chosen[label] = r_l

    idio_input = residual.copy()
    for comp, sl in zip(locals_, country_slices):
        idio_input[sl, sl] -= comp.block()
    idio, tau_info = adaptive_threshold(idio_input, policy)
    info = {
        "k": k,
        "k_selection": k_info,
        "r_l": r_chosen,
        "r_selection": r_info or None,
        "tau": tau_info,
    }
    return global_comp, locals_, idio, info


def double_poet(
    pilot_cov: np.ndarray,
    layout: BlockLayout,
    config: EstimatorConfig,
) -> CovarianceDecomposition:
    """Two-level estimator on a pilot covariance in canonical asset order."""
    pilot = symmetrize(pilot_cov)
    if pilot.shape[0] != layout.n_assets:
        raise ConfigError(
            f"pilot dimension {pilot.shape[0]} != layout assets {layout.n_assets}"
        )
    policy = config.threshold
    global_comp, locals_, idio, info = _double_poet_core(
        pilot, layout.countries, layout.country_slices, config, policy
    )
    meta = {
        "method": "double-poet",
        "p": layout.n_assets,
        "countries": list(layout.countries),
        **info,
    }
    return CovarianceDecomposition.assemble(global_comp, tuple(locals_), idio, meta)


def structured_poet(
    daily_panel: ReturnPanel,
    groups: GroupHierarchy | BlockLayout,
    config: EstimatorConfig,
) -> CovarianceDecomposition:
    """Structure-aware estimator mixing daily and low-frequency information.

    Per continent, a two-level fit on the daily sample covariance supplies the
    within-continent global blocks plus the local and idiosyncratic parts.
    Cross-continent dependence is taken from the ``d``-frequency sample
    correlation through a best low-rank fit of each off-diagonal continent
    pair, rescaled by the daily-based variances.  A final eigendecomposition
    of the assembled global part gives the rank-``k`` global component.
    """
    if daily_panel.frequency_days != 1:
        raise ConfigError("structured_poet requires a daily input panel")
    layout = (
        groups
        if isinstance(groups, BlockLayout)
        else build_layout(daily_panel.asset_ids, groups)
    )
    p = layout.n_assets
    if p != daily_panel.n_assets:
        raise ConfigError("layout does not match panel assets")
    if daily_panel.n_periods // config.d < 2:
        raise ConfigError(
            f"aggregation at d={config.d} leaves fewer than 2 periods"
        )

    daily_cov = sample_covariance(daily_panel)

    # Step 1: per-continent two-level fits on the full-frequency covariance.
    global_blocks: list[FactorComponent] = []
    locals_: list[FactorComponent] = []
    idio = np.zeros((p, p))
    continent_info: dict[str, dict] = {}
    for continent, cs in zip(layout.continents, layout.continent_slices):
        ctry_idx = layout.countries_in(continent)
        labels = tuple(layout.countries[i] for i in ctry_idx)
        rel_slices = tuple(
            slice(layout.country_slices[i].start - cs.start,
                  layout.country_slices[i].stop - cs.start)
            for i in ctry_idx
        )
        block_pilot = daily_cov[cs, cs]
        if isinstance(config.k, int) and block_pilot.shape[0] < config.k:
            raise ConfigError(
                f"continent {continent!r} has {block_pilot.shape[0]} assets, "
                f"fewer than k={config.k}"
            )
        policy = config.threshold.restrict(cs)
        g, ls, u, info = _double_poet_core(
            block_pilot, labels, rel_slices, config, policy, offset=cs.start
        )
        global_blocks.append(g)
        locals_.extend(ls)
        idio[cs, cs] = u
        continent_info[continent] = info

    sigma_g_daily = np.zeros((p, p))
    for g in global_blocks:
        sigma_g_daily[g.start : g.stop, g.start : g.stop] = g.block()
    local_dense = np.zeros((p, p))
    for comp in locals_:
        local_dense[comp.start : comp.stop, comp.start : comp.stop] += comp.block()
    total_daily_diag = np.diag(sigma_g_daily + local_dense + idio).copy()
    if np.any(total_daily_diag <= 0.0):
        raise NumericError("daily block-diagonal estimate has non-positive variance")

    # Final number of global factors: explicit, or (with a single continent)
    # the continent's own choice, else selected on the low-frequency spectrum.
    S = len(layout.continents)
    agg = aggregate_returns(daily_panel, config.d)
    cov_h = sample_covariance(agg)
    if isinstance(config.k, int):
        k_final, k_final_info = config.k, None
    elif S == 1:
        k_final = continent_info[layout.continents[0]]["k"]
        k_final_info = {"source": "single-continent"}
    else:
        spectrum_h = full_eigenvalues(cov_h)
        k_final, sel = _resolve_count(spectrum_h, "auto", config.k_max, "k")
        k_final_info = sel
    if k_final > p:
        raise ConfigError(f"k={k_final} exceeds dimension p={p}")
    for continent, cs in zip(layout.continents, layout.continent_slices):
        if cs.stop - cs.start < k_final:
            raise ConfigError(
                f"continent {continent!r} has {cs.stop - cs.start} assets, "
                f"fewer than k={k_final}"
            )

    # Step 2: low-rank fits of the cross-continent low-frequency correlation.
    theta = np.zeros((p, p))
    pair_ranks: dict[str, int] = {}
    clamped_pairs: list[str] = []
    if S > 1:
        corr_h, _ = correlation_from_covariance(cov_h)
        for i in range(S):
            for j in range(i + 1, S):
                s_lab, q_lab = layout.continents[i], layout.continents[j]
                cs, cq = layout.continent_slices[i], layout.continent_slices[j]
                block = corr_h[cs, cq]
                cap = min(block.shape)
                requested = config.k_sq_for(s_lab, q_lab)
                triples = truncated_svd(block, cap)
                if requested == "auto":
                    sel = singular_ratio_rank(triples.singular_values, cap - 1)
                    rank = sel.chosen
                    if rank > k_final:
                        clamped_pairs.append(f"{s_lab}|{q_lab}")
                        rank = k_final
                else:
                    rank = int(requested)
                    if rank > cap:
                        raise ConfigError(
                            f"k_sq={rank} exceeds min block dimension {cap} "
                            f"for pair {s_lab}|{q_lab}"
                        )
                fit = (
                    triples.left[:, :rank] * triples.singular_values[:rank]
                ) @ triples.right[:, :rank].T
                theta[cs, cq] = fit
                theta[cq, cs] = fit.T
                pair_ranks[f"{s_lab}|{q_lab}"] = rank

    # Step 3: rescale by daily variances and re-eigendecompose the global part.
    root_d = np.sqrt(total_daily_diag)
    sigma_g = symmetrize(sigma_g_daily + theta * np.outer(root_d, root_d))
    global_comp = FactorComponent.from_eigen(top_k_eigen(sigma_g, k_final))

    meta = {
        "method": "structured-poet",
        "p": p,
        "k": k_final,
        "k_selection": k_final_info,
        "d": config.d,
        "continents": {c: continent_info[c] for c in layout.continents},
        "countries": list(layout.countries),
        "k_sq": pair_ranks,
        "k_sq_clamped": clamped_pairs or None,
        "theta_max_abs": float(np.max(np.abs(theta))) if S > 1 else 0.0,
    }
    return CovarianceDecomposition.assemble(global_comp, tuple(locals_), idio, meta)


class PrecisionResult(NamedTuple):
    matrix: np.ndarray
    repaired: bool


def _woodbury_fold(
    a_inv: np.ndarray, vectors: np.ndarray, eigenvalues: np.ndarray
) -> np.ndarray:
    """Inverse of ``A + V diag(c) V'`` given ``A^{-1}``.

    Near-zero eigenvalues are dropped (their rank-one terms vanish); negative
    eigenvalues are handled by the general capacitance form.
    """
    if eigenvalues.size == 0:
        return a_inv
    scale = np.max(np.abs(eigenvalues))
    keep = np.abs(eigenvalues) > 1e-13 * max(scale, 1.0)
    vectors, eigenvalues = vectors[:, keep], eigenvalues[keep]
    if eigenvalues.size == 0:
        return a_inv
    av = a_inv @ vectors
    capacitance = np.diag(1.0 / eigenvalues) + vectors.T @ av
    try:
        correction = av @ scipy.linalg.solve(capacitance, av.T, assume_a="sym")
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"singular capacitance matrix in Woodbury fold: {exc}")
    return symmetrize(a_inv - correction)


def _eigen_inverse(matrix: np.ndarray) -> np.ndarray:
    values, vectors = scipy.linalg.eigh(symmetrize(matrix))
    if np.any(values == 0.0):
        raise NumericError("matrix is exactly singular")
    return symmetrize((vectors / values) @ vectors.T)


def invert_decomposition(
    dec: CovarianceDecomposition, pd_repair: bool = False
) -> PrecisionResult:
    """Precision matrix via nested Woodbury folds.

    The sparse idiosyncratic part is inverted first (Cholesky), then the
    block-diagonal local low-rank terms are folded in, then the global term.
    With ``pd_repair`` enabled, eigenvalues of the total below
    ``PD_FLOOR_REL * trace / p`` are clipped to that floor before inversion
    and ``repaired=True`` is reported; without it a singular idiosyncratic
    part is an error.
    """
    p = dec.p
    if pd_repair:
        repaired_total, repaired = clip_positive_definite(dec.total, PD_FLOOR_REL)
        if repaired:
            return PrecisionResult(_eigen_inverse(repaired_total), True)
    try:
        chol = scipy.linalg.cho_factor(dec.idiosyncratic)
    except scipy.linalg.LinAlgError as exc:
        if pd_repair:
            return PrecisionResult(_eigen_inverse(dec.total), False)
        raise NumericError(
            f"idiosyncratic component is not positive definite ({exc}); "
            "enable pd_repair to invert anyway"
        )
    a_inv = scipy.linalg.cho_solve(chol, np.eye(p))
    if dec.local_components:
        vectors = np.zeros((p, sum(c.rank for c in dec.local_components)))
        eigenvalues = np.concatenate(
            [c.eigenvalues for c in dec.local_components]
        )
        col = 0
        for comp in dec.local_components:
            vectors[comp.start : comp.stop, col : col + comp.rank] = comp.vectors
            col += comp.rank
        a_inv = _woodbury_fold(a_inv, vectors, eigenvalues)
    g = dec.global_component
    if g.rank:
        vectors = np.zeros((p, g.rank))
        vectors[g.start : g.stop] = g.vectors
        a_inv = _woodbury_fold(a_inv, vectors, g.eigenvalues)
    return PrecisionResult(a_inv, False)
