import numpy as np
import numpy.testing as npt
import pytest

from dcedp.cs_recon import temporal_tv
from dcedp.metrics import (
    agreement,
    cut_matrix,
    line_profile,
    tv_report,
    voxel_temporal_tv,
)


class TestVoxelTemporalTV:
    def test_constant_sequence_zero(self):
        X = np.full((6, 5, 5), 2 + 3j)
        npt.assert_array_equal(voxel_temporal_tv(X), 0.0)

    def test_single_step_height(self):
        X = np.zeros((4, 3, 3), dtype=complex)
        X[2:, 1, 2] = 1.5
        tv = voxel_temporal_tv(X)
        assert tv[1, 2] == pytest.approx(1.5)
        assert tv.sum() == pytest.approx(1.5)

    def test_sums_to_sequence_tv(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((7, 6, 6)) + 1j * rng.standard_normal((7, 6, 6))
        assert voxel_temporal_tv(X).sum() == pytest.approx(temporal_tv(X))

    def test_nonnegative_zero_iff_constant(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((5, 4, 4)).astype(complex)
        X[:, 2, 2] = 7.0
        tv = voxel_temporal_tv(X)
        assert np.all(tv >= 0)
        assert tv[2, 2] == 0.0
        varying = np.ptp(X, axis=0) > 0
        assert np.all(tv[varying] > 0)


class TestTVReport:
    def test_regions_and_normalization(self):
        rng = np.random.default_rng(2)
        T, n = 8, 10
        labels = np.zeros((n, n), dtype=int)
        labels[2:5, 2:5] = 1
        X = 0.1 * rng.standard_normal((T, n, n)).astype(complex)
        X[:, labels > 0] += np.linspace(0, 3, T)[:, None]
        rep = tv_report(X, labels, method="test")
        assert rep.contrast_mean > rep.background_mean
        # scaling both method and reference leaves the stats unchanged
        ref = np.abs(X[0]) * 2.0
        a = tv_report(X, labels, reference_first_frame=ref)
        b = tv_report(3.0 * X, labels, reference_first_frame=ref)
        assert a.contrast_mean == pytest.approx(b.contrast_mean)
        assert a.background_mean == pytest.approx(b.background_mean)

    def test_normalization_ratio_invariance(self):
        rng = np.random.default_rng(3)
        T, n = 6, 8
        labels = np.zeros((n, n), dtype=int)
        labels[1:3, 1:3] = 1
        Xa = rng.standard_normal((T, n, n)).astype(complex) + 2.0
        Xb = rng.standard_normal((T, n, n)).astype(complex) + 2.0
        ref = np.abs(Xa[0])
        ra = tv_report(Xa, labels, reference_first_frame=ref)
        rb = tv_report(Xb, labels, reference_first_frame=ref)
        ra2 = tv_report(5.0 * Xa, labels, reference_first_frame=ref)
        rb2 = tv_report(5.0 * Xb, labels, reference_first_frame=ref)
        ratio = ra.background_mean / rb.background_mean
        ratio2 = ra2.background_mean / rb2.background_mean
        assert ratio == pytest.approx(ratio2, rel=1e-12)

    def test_requires_both_regions(self):
        X = np.ones((3, 4, 4), dtype=complex)
        with pytest.raises(ValueError):
            tv_report(X, np.zeros((4, 4), dtype=int))


class TestLineProfile:
    def test_constant_image_constant_profile(self):
        X = np.full((2, 8, 8), 3.0, dtype=complex)
        prof = line_profile(X, 0, (1, 1), (6, 4))
        npt.assert_array_equal(prof, 3.0)

    def test_profile_length_is_raster_count(self):
        X = np.zeros((1, 16, 16), dtype=complex)
        assert line_profile(X, 0, (2, 3), (2, 9)).size == 7
        assert line_profile(X, 0, (1, 1), (9, 5)).size == 9

    def test_step_edge_single_transition(self):
        X = np.zeros((1, 12, 12), dtype=complex)
        X[0, :, 6:] = 1.0
        prof = line_profile(X, 0, (5, 0), (5, 11))
        d = np.diff(prof)
        assert np.count_nonzero(d) == 1
        assert d.max() == pytest.approx(1.0)


class TestCutMatrix:
    def test_shape_and_values(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((7, 9, 9)) + 1j * rng.standard_normal((7, 9, 9))
        cm = cut_matrix(X, 4)
        assert cm.shape == (9, 7)
        npt.assert_allclose(cm[3], np.abs(X[:, 3, 4]))


class TestAgreement:
    def test_identical_lists(self):
        a = np.linspace(0.01, 0.05, 10)
        rep = agreement(a, a)
        assert rep.r_squared == pytest.approx(1.0)
        assert rep.mean_diff == pytest.approx(0.0)
        assert rep.slope == pytest.approx(1.0)

    def test_constant_offset(self):
        a = np.linspace(0.01, 0.05, 10)
        rep = agreement(a, a + 0.1)
        assert rep.r_squared == pytest.approx(1.0)
        assert rep.mean_diff == pytest.approx(-0.1)
        assert rep.intercept == pytest.approx(0.1)

    def test_uncorrelated_lists(self):
        rng = np.random.default_rng(7)
        r2s = [agreement(rng.standard_normal(20), rng.standard_normal(20)).r_squared
               for _ in range(50)]
        assert np.median(r2s) < 0.15

    def test_swap_symmetry(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal(15)
        b = 0.8 * a + 0.1 * rng.standard_normal(15)
        ab, ba = agreement(a, b), agreement(b, a)
        assert ab.r_squared == pytest.approx(ba.r_squared, rel=1e-12)
        assert ab.mean_diff == pytest.approx(-ba.mean_diff)

    def test_limits_contain_points(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal(40)
        b = a + 0.01 * rng.standard_normal(40)
        rep = agreement(a, b)
        assert 0.9 <= rep.frac_within_loa <= 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            agreement([1.0], [2.0])
        with pytest.raises(ValueError):
            agreement([1.0, 2.0], [1.0, 2.0, 3.0])
