import numpy as np
import pytest

from spoet import (
    ConfigError,
    eigenvalue_ratio_select,
    singular_gap_rank,
    singular_ratio_rank,
)


class TestEigenvalueRatio:
    def test_clear_second_spike(self):
        result = eigenvalue_ratio_select([100.0, 50.0, 2.0, 1.0, 0.5], cap=4)
        np.testing.assert_allclose(result.criterion_values, [2.0, 25.0, 2.0, 2.0])
        assert result.chosen == 2

    def test_tie_breaks_to_smallest_index(self):
        result = eigenvalue_ratio_select([9.0, 3.0, 1.0], cap=2)
        np.testing.assert_allclose(result.criterion_values, [3.0, 3.0])
        assert result.chosen == 1

    def test_geometric_spectrum_degeneracy(self):
        # ratio 2 is exact in binary, so all criterion values tie exactly
        spectrum = [0.5**i for i in range(8)]
        assert eigenvalue_ratio_select(spectrum, cap=5).chosen == 1

    def test_cap_reduced_with_warning(self):
        with pytest.warns(UserWarning, match="reducing cap"):
            result = eigenvalue_ratio_select([5.0, 2.0, 1.0, 0.0, 0.0], cap=4)
        assert result.cap == 2

    def test_too_few_positive(self):
        with pytest.raises(ConfigError):
            eigenvalue_ratio_select([1.0, 0.0, 0.0], cap=2)

    def test_rejects_ascending_input(self):
        with pytest.raises(ConfigError, match="descending"):
            eigenvalue_ratio_select([1.0, 2.0, 3.0], cap=2)


class TestSingularGap:
    def test_largest_gap(self):
        result = singular_gap_rank([5.0, 4.9, 1.0, 0.9], cap=3)
        np.testing.assert_allclose(result.criterion_values, [0.1, 3.9, 0.1])
        assert result.chosen == 2

    def test_two_values(self):
        assert singular_gap_rank([3.0, 1.0], cap=1).chosen == 1

    def test_all_equal_ties_to_one(self):
        assert singular_gap_rank([2.0, 2.0, 2.0], cap=2).chosen == 1

    def test_cap_bounds(self):
        with pytest.raises(ConfigError):
            singular_gap_rank([3.0, 1.0], cap=2)
        with pytest.raises(ConfigError):
            singular_gap_rank([3.0, 1.0], cap=0)


class TestSingularRatio:
    def test_dominant_first(self):
        result = singular_ratio_rank([8.0, 2.0, 1.9], cap=2)
        assert result.chosen == 1

    def test_second_ratio_wins(self):
        result = singular_ratio_rank([6.0, 3.0, 1.0], cap=2)
        np.testing.assert_allclose(result.criterion_values, [2.0, 3.0])
        assert result.chosen == 2

    def test_zero_truncates_with_warning(self):
        with pytest.warns(UserWarning, match="truncating"):
            result = singular_ratio_rank([8.0, 2.0, 0.0], cap=2)
        assert result.cap == 1
        assert result.chosen == 1


class TestSharedProperties:
    def test_scale_invariance(self, rng):
        for _ in range(25):
            spectrum = np.sort(rng.uniform(0.1, 50.0, size=12))[::-1]
            factor = float(rng.uniform(0.01, 100.0))
            for select in (eigenvalue_ratio_select, singular_gap_rank, singular_ratio_rank):
                base = select(spectrum, cap=8).chosen
                scaled = select(spectrum * factor, cap=8).chosen
                assert base == scaled

    def test_spiked_spectra_recovered(self, rng):
        # spikes in a narrow band >= 10x the bulk: all selectors must agree
        for _ in range(30):
            m = int(rng.integers(1, 6))
            bulk = np.sort(rng.uniform(0.2, 1.0, size=50 - m))[::-1]
            spikes = np.sort(bulk[0] * rng.uniform(10.0, 12.0, size=m))[::-1]
            spectrum = np.concatenate([spikes, bulk])
            assert eigenvalue_ratio_select(spectrum, cap=10).chosen == m
            assert singular_gap_rank(spectrum, cap=10).chosen == m
            assert singular_ratio_rank(spectrum, cap=10).chosen == m
