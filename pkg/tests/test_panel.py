import math

import numpy as np
import numpy.testing as npt
import pytest

from spoet import (
    ConfigError,
    DataError,
    GroupHierarchy,
    ReturnPanel,
    aggregate_returns,
    build_layout,
    load_membership,
    load_panel,
    reorder_by_hierarchy,
)

from conftest import make_panel


def write_csv(path, header, rows):
    path.write_text("\n".join([header] + rows) + "\n")
    return path


class TestLoadPanel:
    def test_prices_log_identity(self, tmp_path):
        e = math.e
        f = write_csv(
            tmp_path / "prices.csv",
            "date,A",
            [f"2020-01-01,1.0", f"2020-01-02,{e}", f"2020-01-03,{e*e}"],
        )
        panel = load_panel(f, mode="prices")
        npt.assert_allclose(panel.values, [[1.0, 1.0]], rtol=1e-12)
        assert panel.periods == ("2020-01-02", "2020-01-03")

    def test_missing_value_drops_asset_with_warning(self, tmp_path):
        f = write_csv(
            tmp_path / "returns.csv",
            "date,A,B,C",
            ["2020-01-01,0.1,,0.3", "2020-01-02,0.0,0.2,0.1"],
        )
        with pytest.warns(UserWarning, match="dropping 1 asset"):
            panel = load_panel(f, mode="returns")
        assert panel.asset_ids == ("A", "C")
        assert panel.values.shape == (2, 2)

    def test_zero_price_is_error(self, tmp_path):
        f = write_csv(
            tmp_path / "prices.csv",
            "date,A",
            ["2020-01-01,1.0", "2020-01-02,0.0", "2020-01-03,1.0"],
        )
        with pytest.raises(DataError, match="strictly positive"):
            load_panel(f, mode="prices")

    def test_too_few_rows(self, tmp_path):
        f = write_csv(tmp_path / "r.csv", "date,A", ["2020-01-01,0.1"])
        with pytest.raises(DataError, match="at least 2"):
            load_panel(f)

    def test_all_assets_dropped(self, tmp_path):
        f = write_csv(
            tmp_path / "r.csv", "date,A", ["2020-01-01,", "2020-01-02,0.1"]
        )
        with pytest.warns(UserWarning), pytest.raises(DataError, match="survive"):
            load_panel(f)

    def test_malformed_cell(self, tmp_path):
        f = write_csv(
            tmp_path / "r.csv", "date,A", ["2020-01-01,abc", "2020-01-02,0.1"]
        )
        with pytest.raises(DataError, match="non-numeric"):
            load_panel(f)

    def test_bad_mode(self, tmp_path):
        with pytest.raises(ConfigError):
            load_panel(tmp_path / "x.csv", mode="levels")


class TestPanelInvariants:
    def test_rejects_nonfinite(self):
        with pytest.raises(DataError, match="non-finite"):
            make_panel([[0.1, np.nan]])

    def test_rejects_single_period(self):
        with pytest.raises(DataError, match="at least 2"):
            make_panel([[0.1]])

    def test_rejects_nonincreasing_periods(self):
        with pytest.raises(DataError, match="strictly increasing"):
            ReturnPanel(("A",), ("2020-01-02", "2020-01-01"), [[0.1, 0.2]])

    def test_values_are_immutable(self):
        panel = make_panel([[0.1, 0.2]])
        with pytest.raises(ValueError):
            panel.values[0, 0] = 9.0


class TestAggregate:
    def test_pairs_sum(self):
        panel = make_panel([[1.0, 2.0, 3.0, 4.0]])
        out = aggregate_returns(panel, 2)
        npt.assert_allclose(out.values, [[3.0, 7.0]])
        assert out.frequency_days == 2
        assert out.periods == (panel.periods[1], panel.periods[3])

    def test_d1_is_identity(self):
        panel = make_panel([[1.0, 2.0, 3.0]])
        out = aggregate_returns(panel, 1)
        npt.assert_array_equal(out.values, panel.values)
        assert out.periods == panel.periods

    def test_oldest_observations_dropped(self):
        panel = make_panel([[1.0, 2.0, 3.0, 4.0, 5.0]])
        out = aggregate_returns(panel, 2)
        npt.assert_allclose(out.values, [[5.0, 9.0]])

    def test_window_exceeding_length(self):
        panel = make_panel([[1.0, 2.0, 3.0]])
        with pytest.raises(ConfigError, match="exceeds"):
            aggregate_returns(panel, 4)

    def test_requires_daily_input(self):
        panel = make_panel([[1.0, 2.0]], freq=5)
        with pytest.raises(ConfigError, match="daily"):
            aggregate_returns(panel, 2)

    @pytest.mark.parametrize("a,b", [(2, 3), (3, 2), (2, 2)])
    def test_nested_windows_compose_under_exact_division(self, rng, a, b):
        T = a * b * 4
        panel = make_panel(rng.standard_normal((3, T)))
        once = aggregate_returns(panel, a * b)
        twice = aggregate_returns(panel, a)
        twice = ReturnPanel(
            twice.asset_ids, twice.periods, twice.values, frequency_days=1
        )
        twice = aggregate_returns(twice, b)
        npt.assert_allclose(twice.values, once.values, atol=1e-12)


class TestReorder:
    def _groups(self, asset_ids, continents, countries):
        return GroupHierarchy(
            continent_of=dict(zip(asset_ids, continents)),
            country_of=dict(zip(asset_ids, countries)),
        )

    def test_sorted_input_unchanged(self, rng):
        panel = make_panel(rng.standard_normal((3, 4)), asset_ids=["a", "b", "c"])
        groups = self._groups(["a", "b", "c"], ["X", "X", "Y"], ["X1", "X1", "Y1"])
        out, _, perm = reorder_by_hierarchy(panel, groups)
        npt.assert_array_equal(perm, [0, 1, 2])
        assert out is panel

    def test_interleaved_continents(self, rng):
        panel = make_panel(rng.standard_normal((4, 4)), asset_ids=list("abcd"))
        groups = self._groups(list("abcd"), ["A", "B", "A", "B"], ["A1", "B1", "A1", "B1"])
        out, _, perm = reorder_by_hierarchy(panel, groups)
        npt.assert_array_equal(perm, [0, 2, 1, 3])
        assert out.asset_ids == ("a", "c", "b", "d")
        npt.assert_array_equal(out.values, panel.values[perm])

    def test_missing_membership(self, rng):
        panel = make_panel(rng.standard_normal((2, 3)), asset_ids=["a", "b"])
        groups = self._groups(["a"], ["X"], ["X1"])
        with pytest.raises(DataError, match="missing"):
            reorder_by_hierarchy(panel, groups)

    def test_idempotent(self, rng):
        panel = make_panel(rng.standard_normal((4, 5)), asset_ids=list("abcd"))
        groups = self._groups(list("abcd"), ["B", "A", "B", "A"], ["B1", "A1", "B1", "A1"])
        once, _, _ = reorder_by_hierarchy(panel, groups)
        twice, _, perm = reorder_by_hierarchy(once, groups)
        npt.assert_array_equal(perm, np.arange(4))
        assert twice.asset_ids == once.asset_ids

    def test_permutation_round_trip(self, rng):
        panel = make_panel(rng.standard_normal((5, 4)), asset_ids=list("abcde"))
        groups = self._groups(
            list("abcde"), ["Y", "X", "Y", "X", "X"], ["Y1", "X1", "Y1", "X2", "X1"]
        )
        out, _, perm = reorder_by_hierarchy(panel, groups)
        inverse = np.argsort(perm)
        npt.assert_array_equal(out.values[inverse], panel.values)
        assert tuple(out.asset_ids[i] for i in inverse) == panel.asset_ids


class TestHierarchy:
    def test_country_cannot_straddle_continents(self):
        with pytest.raises(DataError, match="straddles"):
            GroupHierarchy(
                continent_of={"a": "X", "b": "Y"},
                country_of={"a": "K", "b": "K"},
            )

    def test_layout_requires_contiguity(self):
        groups = GroupHierarchy(
            continent_of={"a": "X", "b": "Y", "c": "X"},
            country_of={"a": "X1", "b": "Y1", "c": "X1"},
        )
        with pytest.raises(DataError, match="contiguous"):
            build_layout(["a", "b", "c"], groups)

    def test_layout_slices(self):
        groups = GroupHierarchy(
            continent_of={"a": "X", "b": "X", "c": "Y"},
            country_of={"a": "X1", "b": "X2", "c": "Y1"},
            sector_of={"a": "tech", "b": "energy", "c": "tech"},
        )
        layout = build_layout(["a", "b", "c"], groups)
        assert layout.continents == ("X", "Y")
        assert layout.continent_slices == (slice(0, 2), slice(2, 3))
        assert layout.countries == ("X1", "X2", "Y1")
        assert layout.sectors == ("tech", "energy", "tech")
        assert layout.countries_in("X") == [0, 1]


def test_load_membership(tmp_path):
    f = tmp_path / "members.csv"
    f.write_text("asset_id,continent,country,sector\na,X,X1,tech\nb,Y,Y1,\n")
    groups = load_membership(f)
    assert groups.continent_of == {"a": "X", "b": "Y"}
    assert groups.sector_of == {"a": "tech", "b": ""}
