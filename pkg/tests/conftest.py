import numpy as np
import pytest

from spoet import GroupHierarchy, ReturnPanel, build_layout


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)


def make_panel(values, freq=1, asset_ids=None, start="2020-01-01"):
    """Panel from a p x T array with synthetic business-day labels."""
    from spoet.simulation import business_days

    values = np.asarray(values, dtype=float)
    p, T = values.shape
    if asset_ids is None:
        asset_ids = [f"A{i:03d}" for i in range(p)]
    return ReturnPanel(
        asset_ids=tuple(asset_ids),
        periods=business_days(start, T),
        values=values,
        frequency_days=freq,
    )


def two_continent_hierarchy(asset_ids, split=None, countries_per_continent=1):
    """Assign the first half of assets to continent X, the rest to Y."""
    n = len(asset_ids)
    split = n // 2 if split is None else split
    continent_of, country_of = {}, {}
    for i, asset in enumerate(asset_ids):
        continent = "X" if i < split else "Y"
        size = split if continent == "X" else n - split
        offset = i if continent == "X" else i - split
        country_idx = min(
            offset * countries_per_continent // max(size, 1),
            countries_per_continent - 1,
        )
        continent_of[asset] = continent
        country_of[asset] = f"{continent}{country_idx + 1}"
    groups = GroupHierarchy(continent_of=continent_of, country_of=country_of)
    return groups, build_layout(asset_ids, groups)
