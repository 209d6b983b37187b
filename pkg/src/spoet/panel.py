"""Return-panel data model: ingestion, log returns, aggregation, ordering.

A :class:`ReturnPanel` holds a ``p x T`` matrix of log-returns together with
period labels and the sampling frequency (trading days per period).  A
:class:`GroupHierarchy` maps each asset to its continent / country (and
optionally sector); a :class:`BlockLayout` is the derived contiguous block
structure that the estimators consume.  Panels are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ReturnPanel:
    """Panel of log-returns for ``p`` assets over ``T`` periods.

    Parameters
    ----------
    asset_ids : sequence of str
        Opaque, case-sensitive asset identifiers (row order of ``values``).
    periods : sequence of str
        Strictly increasing ISO-8601 period labels (column order).
    values : array_like, shape (p, T)
        Log-returns; all entries must be finite.
    frequency_days : int
        Trading days per period (1 for daily data).
    """

    asset_ids: tuple[str, ...]
    periods: tuple[str, ...]
    values: np.ndarray
    frequency_days: int = 1

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        object.__setattr__(self, "periods", tuple(str(t) for t in self.periods))
        object.__setattr__(self, "values", _frozen_array(self.values))
        if self.values.ndim != 2:
            raise DataError("panel values must be a 2-d array")
        p, T = self.values.shape
        if p < 1 or len(self.asset_ids) != p:
            raise DataError(f"expected {p} >= 1 asset ids, got {len(self.asset_ids)}")
        if T < 2:
            raise DataError(f"panel needs at least 2 periods, got {T}")
        if len(self.periods) != T:
            raise DataError(f"expected {T} period labels, got {len(self.periods)}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("panel contains non-finite values")
        if any(a >= b for a, b in zip(self.periods, self.periods[1:])):
            raise DataError("period labels must be strictly increasing")
        if self.frequency_days < 1:
            raise ConfigError("frequency_days must be a positive integer")

    @property
    def n_assets(self) -> int:
        return self.values.shape[0]

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GroupHierarchy:
    """Continent / country (and optional sector) memberships per asset.

    Every country must belong to exactly one continent.  Market-close
    offsets, when given, are per continent and lie in ``[0, 1)``.
    """

    continent_of: dict[str, str]
    country_of: dict[str, str]
    sector_of: dict[str, str] | None = None
    close_offset_of: dict[str, float] | None = None

    def __post_init__(self):
        if set(self.continent_of) != set(self.country_of):
            raise DataError("continent and country maps must cover the same assets")
        seen: dict[str, str] = {}
        for asset, country in self.country_of.items():
            continent = self.continent_of[asset]
            if seen.setdefault(country, continent) != continent:
                raise DataError(f"country {country!r} straddles continents")
        if self.close_offset_of is not None:
            for continent, delta in self.close_offset_of.items():
                if not 0.0 <= delta < 1.0:
                    raise DataError(
                        f"close offset for {continent!r} must lie in [0, 1)"
                    )

    def continent_of_country(self, country: str) -> str:
        for asset, c in self.country_of.items():
            if c == country:
                return self.continent_of[asset]
        raise DataError(f"unknown country {country!r}")


@dataclass(frozen=True)
class BlockLayout:
    """Contiguous continent/country block structure of an ordered asset list."""

    asset_ids: tuple[str, ...]
    continents: tuple[str, ...]
    continent_slices: tuple[slice, ...]
    countries: tuple[str, ...]
    country_slices: tuple[slice, ...]
    country_continent: tuple[str, ...]
    sectors: tuple[str, ...] | None = None

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)

    def countries_in(self, continent: str) -> list[int]:
        """Indices into ``countries`` of the countries inside ``continent``."""
        return [i for i, c in enumerate(self.country_continent) if c == continent]


def _contiguous_blocks(labels) -> list[tuple[str, slice]]:
    blocks: list[tuple[str, slice]] = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            blocks.append((labels[start], slice(start, i)))
            start = i
    return blocks


def build_layout(asset_ids, groups: GroupHierarchy) -> BlockLayout:
    """Derive the block layout of ``asset_ids`` under ``groups``.

    Requires the canonical ordering produced by :func:`reorder_by_hierarchy`:
    countries contiguous within contiguous continents.
    """
    asset_ids = tuple(asset_ids)
    missing = [a for a in asset_ids if a not in groups.continent_of]
    if missing:
        raise DataError(f"assets missing from membership: {missing[:5]}")
    continents = [groups.continent_of[a] for a in asset_ids]
    countries = [groups.country_of[a] for a in asset_ids]
    cont_blocks = _contiguous_blocks(continents)
    ctry_blocks = _contiguous_blocks(countries)
    if len({c for c, _ in cont_blocks}) != len(cont_blocks):
        raise DataError("assets are not contiguous by continent; reorder first")
    if len({c for c, _ in ctry_blocks}) != len(ctry_blocks):
        raise DataError("assets are not contiguous by country; reorder first")
    sectors = None
    if groups.sector_of is not None and all(
        groups.sector_of.get(a) not in (None, "") for a in asset_ids
    ):
        sectors = tuple(groups.sector_of[a] for a in asset_ids)
    return BlockLayout(
        asset_ids=asset_ids,
        continents=tuple(c for c, _ in cont_blocks),
        continent_slices=tuple(s for _, s in cont_blocks),
        countries=tuple(c for c, _ in ctry_blocks),
        country_slices=tuple(s for _, s in ctry_blocks),
        country_continent=tuple(
            groups.continent_of_country(c) for c, _ in ctry_blocks
        ),
        sectors=sectors,
    )


def load_panel(path, mode: str = "returns") -> ReturnPanel:
    """Load a returns or prices CSV into a daily :class:`ReturnPanel`.

    The file must have a header row ``date,<asset_1>,<asset_2>,...`` and one
    row per trading day.  Empty cells are treated as missing; assets with any
    missing value are dropped with a warning.  In ``prices`` mode the values
    are converted to log-returns (``T = rows - 1``) and must all be strictly
    positive.
    """
    if mode not in ("prices", "returns"):
        raise ConfigError(f"mode must be 'prices' or 'returns', got {mode!r}")
    try:
        frame = pd.read_csv(path, index_col=0, dtype=str)
    except Exception as exc:
        raise DataError(f"could not parse CSV {path}: {exc}") from exc
    if frame.shape[1] < 1:
        raise DataError(f"{path}: no asset columns found")
    if frame.shape[0] < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {frame.shape[0]}")
    try:
        numeric = frame.apply(pd.to_numeric, errors="raise")
    except Exception as exc:
        raise DataError(f"{path}: non-numeric cell: {exc}") from exc

    keep = numeric.columns[numeric.notna().all(axis=0)]
    dropped = [c for c in numeric.columns if c not in set(keep)]
    if dropped:
        warnings.warn(
            f"dropping {len(dropped)} asset(s) with missing values: "
            f"{dropped[:5]}{'...' if len(dropped) > 5 else ''}",
            stacklevel=2,
        )
    if len(keep) == 0:
        raise DataError(f"{path}: no assets survive the missing-data filter")
    numeric = numeric[keep]
    periods = [str(t) for t in numeric.index]
    values = numeric.to_numpy(dtype=float).T  # p x rows

    if mode == "prices":
        if np.any(values <= 0.0):
            raise DataError(f"{path}: prices must be strictly positive")
        values = np.diff(np.log(values), axis=1)
        periods = periods[1:]
    return ReturnPanel(
        asset_ids=tuple(keep), periods=tuple(periods), values=values, frequency_days=1
    )


def load_membership(path) -> GroupHierarchy:
    """Load a membership CSV (``asset_id,continent,country,sector``)."""
    try:
        frame = pd.read_csv(path, dtype=str)
    except Exception as exc:
        raise DataError(f"could not parse CSV {path}: {exc}") from exc
    required = {"asset_id", "continent", "country"}
    if not required.issubset(frame.columns):
        raise DataError(f"{path}: membership needs columns {sorted(required)}")
    if frame["asset_id"].duplicated().any():
        raise DataError(f"{path}: duplicate asset ids in membership")
    assets = frame["asset_id"].astype(str)
    continent_of = dict(zip(assets, frame["continent"].astype(str)))
    country_of = dict(zip(assets, frame["country"].astype(str)))
    sector_of = None
    if "sector" in frame.columns:
        sec = frame["sector"].fillna("")
        sector_of = dict(zip(assets, sec.astype(str)))
    return GroupHierarchy(
        continent_of=continent_of, country_of=country_of, sector_of=sector_of
    )


def aggregate_returns(panel: ReturnPanel, d: int) -> ReturnPanel:
    """Sum consecutive windows of ``d`` daily log-returns.

    Output has ``floor(T / d)`` periods labelled by each window's last day.
    When ``d`` does not divide ``T``, the oldest ``T mod d`` observations are
    discarded so the most recent information is kept.
    """
    if panel.frequency_days != 1:
        raise ConfigError("aggregation requires a daily panel (frequency_days == 1)")
    if d < 1:
        raise ConfigError(f"aggregation window d must be >= 1, got {d}")
    T = panel.n_periods
    if d > T:
        raise ConfigError(f"aggregation window d={d} exceeds panel length T={T}")
    if d == 1:
        return panel
    n_out = T // d
    trimmed = panel.values[:, T - n_out * d :]
    summed = trimmed.reshape(panel.n_assets, n_out, d).sum(axis=2)
    labels = panel.periods[T - n_out * d + d - 1 :: d]
    return ReturnPanel(
        asset_ids=panel.asset_ids,
        periods=labels,
        values=summed,
        frequency_days=d,
    )


def reorder_by_hierarchy(
    panel: ReturnPanel, groups: GroupHierarchy
) -> tuple[ReturnPanel, GroupHierarchy, np.ndarray]:
    """Sort assets by (continent, country, original position).

    Returns the reordered panel, the (unchanged) hierarchy, and the
    permutation ``perm`` such that ``out.values == panel.values[perm]``.
    Applying ``np.argsort(perm)`` to any per-asset result restores the
    original input order.
    """
    missing = [a for a in panel.asset_ids if a not in groups.continent_of]
    if missing:
        raise DataError(f"assets missing from membership: {missing[:5]}")
    keys = [
        (groups.continent_of[a], groups.country_of[a], i)
        for i, a in enumerate(panel.asset_ids)
    ]
    perm = np.array([i for _, _, i in sorted(keys)], dtype=int)
    if np.array_equal(perm, np.arange(panel.n_assets)):
        return panel, groups, perm
    reordered = ReturnPanel(
        asset_ids=tuple(panel.asset_ids[i] for i in perm),
        periods=panel.periods,
        values=panel.values[perm],
        frequency_days=panel.frequency_days,
    )
    return reordered, groups, perm
