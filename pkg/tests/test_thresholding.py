import numpy as np
import numpy.testing as npt
import pytest

from spoet import (
    ConfigError,
    DEFAULT_TAU_GRID,
    NumericError,
    ThresholdPolicy,
    adaptive_threshold,
    select_tau,
)
from spoet.thresholding import threshold_at


def random_residual(rng, p=8):
    a = rng.standard_normal((p, p))
    residual = (a + a.T) / 2
    np.fill_diagonal(residual, rng.uniform(0.5, 2.0, p))
    return residual


class TestThresholdAt:
    def test_tau_zero_soft_keeps_everything(self, rng):
        residual = random_residual(rng)
        out = threshold_at(residual, 0.0, "soft")
        npt.assert_allclose(out, residual, atol=1e-15)

    def test_soft_arithmetic(self):
        residual = np.array([[1.0, 0.5, -0.1], [0.5, 1.0, 0.0], [-0.1, 0.0, 1.0]])
        out = threshold_at(residual, 0.2, "soft")
        npt.assert_allclose(out[0, 1], 0.3, atol=1e-15)
        npt.assert_allclose(out[0, 2], 0.0, atol=1e-15)

    def test_hard_keeps_survivors_verbatim(self):
        residual = np.array([[1.0, 0.5], [0.5, 1.0]])
        out = threshold_at(residual, 0.3, "hard")
        npt.assert_allclose(out[0, 1], 0.5)
        out = threshold_at(residual, 0.6, "hard")
        npt.assert_allclose(out[0, 1], 0.0)

    def test_entry_dependent_scaling(self):
        # same tau, bigger variances -> bigger absolute cutoff
        residual = np.diag([4.0, 9.0]).astype(float)
        residual[0, 1] = residual[1, 0] = 1.1
        out = threshold_at(residual, 0.2, "hard")  # cutoff 0.2 * 6 = 1.2
        npt.assert_allclose(out[0, 1], 0.0)

    def test_negative_diagonal_rejected(self):
        residual = np.array([[1.0, 0.2], [0.2, -0.5]])
        with pytest.raises(NumericError, match="nonnegative"):
            threshold_at(residual, 0.1, "soft")

    def test_numerically_zero_diagonal_tolerated(self):
        # a complete factor fit leaves a ~0 residual; rounding noise on the
        # diagonal must not be fatal
        residual = np.array([[1e-16, 0.0], [0.0, -1e-16]])
        out = threshold_at(residual, 0.1, "soft")
        assert np.all(np.isfinite(out))


class TestSectorMask:
    def test_cross_sector_zeroed_same_sector_kept(self, rng):
        residual = random_residual(rng, 3)
        policy = ThresholdPolicy(sectors=("tech", "tech", "energy"))
        out, info = adaptive_threshold(residual, policy)
        assert info["mode"] == "sector-mask"
        npt.assert_allclose(out[0, 1], residual[0, 1])  # same sector, untouched
        assert out[0, 2] == 0.0 and out[1, 2] == 0.0

    def test_block_diagonal_under_sector_order(self, rng):
        p = 12
        sectors = tuple(["a"] * 4 + ["b"] * 4 + ["c"] * 4)
        residual = random_residual(rng, p)
        out, _ = adaptive_threshold(residual, ThresholdPolicy(sectors=sectors))
        for i in range(p):
            for j in range(p):
                if sectors[i] != sectors[j]:
                    assert out[i, j] == 0.0

    def test_sector_count_mismatch(self, rng):
        with pytest.raises(ConfigError, match="labels"):
            adaptive_threshold(random_residual(rng, 4), ThresholdPolicy(sectors=("a",)))


class TestSelectTau:
    def test_identity_selects_grid_minimum(self):
        sel = select_tau(np.eye(4), ThresholdPolicy(), (0.0, 0.5, 1.0))
        assert sel.tau == 0.0 and sel.achieved_pd

    def test_equicorrelated_pd_input(self):
        # 1 on the diagonal, 0.9 off-diagonal at p=3: eigenvalues 2.8, 0.1, 0.1
        residual = np.full((3, 3), 0.9)
        np.fill_diagonal(residual, 1.0)
        assert np.linalg.eigvalsh(residual)[0] > 0
        sel = select_tau(residual, ThresholdPolicy(), DEFAULT_TAU_GRID)
        assert sel.tau == DEFAULT_TAU_GRID[0] and sel.achieved_pd

    def test_indefinite_input_needs_larger_tau(self):
        # -0.7 equicorrelation at p=3 has min eigenvalue 1 - 1.4 < 0; soft
        # thresholding at tau >= 0.7 zeroes the off-diagonals and restores PD
        residual = np.full((3, 3), -0.7)
        np.fill_diagonal(residual, 1.0)
        assert np.linalg.eigvalsh(residual)[0] < 0
        grid = (0.1, 0.2, 0.3, 0.7)
        # oracle: smallest grid tau whose thresholded matrix is PD
        expected = None
        for tau in grid:
            lam = np.linalg.eigvalsh(threshold_at(residual, tau, "soft"))[0]
            if lam > 1e-8 * np.trace(residual) / 3:
                expected = tau
                break
        sel = select_tau(residual, ThresholdPolicy(), grid)
        assert sel.tau == expected
        assert sel.achieved_pd

    def test_exhausted_grid_flags_failure(self):
        residual = np.full((3, 3), -0.7)
        np.fill_diagonal(residual, 1.0)
        sel = select_tau(residual, ThresholdPolicy(), (0.0, 0.05))
        assert sel.tau == 0.05 and not sel.achieved_pd

    def test_empty_grid(self):
        with pytest.raises(ConfigError, match="nonempty"):
            select_tau(np.eye(2), ThresholdPolicy(), ())

    def test_unsorted_grid(self):
        with pytest.raises(ConfigError, match="ascending"):
            select_tau(np.eye(2), ThresholdPolicy(), (0.5, 0.1))


class TestPolicy:
    def test_validates_shrinkage(self):
        with pytest.raises(ConfigError):
            ThresholdPolicy(shrinkage="scad")

    def test_validates_tau(self):
        with pytest.raises(ConfigError):
            ThresholdPolicy(tau=-0.1)
        with pytest.raises(ConfigError):
            ThresholdPolicy(tau="magic")

    def test_restrict_slices_sectors(self):
        policy = ThresholdPolicy(sectors=("a", "b", "c", "d"))
        assert policy.restrict(slice(1, 3)).sectors == ("b", "c")

    def test_auto_resolution_reported(self, rng):
        residual = random_residual(rng, 5)
        out, info = adaptive_threshold(residual, ThresholdPolicy(tau="auto"))
        assert info["mode"] == "auto"
        assert info["tau"] in [float(t) for t in DEFAULT_TAU_GRID]


class TestProperties:
    """Bulk property checks over random residuals (acceptance runs 200+)."""

    def test_diagonal_never_altered(self, rng):
        for _ in range(50):
            residual = random_residual(rng, int(rng.integers(2, 10)))
            tau = float(rng.uniform(0, 1.5))
            mode = "soft" if rng.random() < 0.5 else "hard"
            out = threshold_at(residual, tau, mode)
            npt.assert_array_equal(np.diag(out), np.diag(residual))

    def test_soft_shrinkage_contracts(self, rng):
        for _ in range(50):
            residual = random_residual(rng, int(rng.integers(2, 10)))
            out = threshold_at(residual, float(rng.uniform(0, 1.5)), "soft")
            assert np.all(np.abs(out) <= np.abs(residual) + 1e-15)

    def test_sparsity_monotone_in_tau(self, rng):
        for _ in range(30):
            residual = random_residual(rng, 8)
            taus = np.sort(rng.uniform(0, 1.5, size=4))
            counts = [
                np.count_nonzero(threshold_at(residual, t, "soft"))
                for t in taus
            ]
            assert all(a >= b for a, b in zip(counts, counts[1:]))
