import numpy as np
import numpy.testing as npt
import pytest

from dcedp import kspace
from dcedp.cs_recon import (
    CSConfig,
    cs_gradient,
    cs_objective,
    inufft_seq,
    reconstruct_cs,
    smoothed_temporal_tv,
    temporal_tv,
)
from dcedp.kspace import frame_trajectories, make_coils, KSpaceFrames
from dcedp.phantom import default_spec, render_phantom


def tiny_problem(n=16, T=4, coils_n=2, sp=5, seed=0, from_image=None):
    rng = np.random.default_rng(seed)
    coils = make_coils(n, coils_n, seed=2)
    trajs = frame_trajectories(T, sp, grid_size=n)
    if from_image is None:
        X = rng.standard_normal((T, n, n)) + 1j * rng.standard_normal((T, n, n))
    else:
        X = from_image
    frames = np.stack([kspace.forward(X[t], coils, trajs[t]) for t in range(T)])
    k = KSpaceFrames(frames=frames, trajectories=trajs, noise_sigma=0.0, seed=0)
    return X, k, coils


class TestTemporalTV:
    def test_constant_sequence_is_zero(self):
        X = np.ones((5, 8, 8), dtype=complex) * (2 + 1j)
        assert temporal_tv(X) == 0.0

    def test_single_voxel_complex_step(self):
        X = np.zeros((2, 1, 1), dtype=complex)
        X[1, 0, 0] = 3 + 4j
        assert temporal_tv(X) == pytest.approx(5.0)

    def test_smoothed_converges_from_above(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((6, 8, 8)) + 1j * rng.standard_normal((6, 8, 8))
        exact = temporal_tv(X)
        prev = np.inf
        for eps in [1e-2, 1e-4, 1e-8]:
            s = smoothed_temporal_tv(X, eps)
            assert exact <= s < prev
            prev = s
        assert smoothed_temporal_tv(X, 1e-2) > exact
        assert prev == pytest.approx(exact, rel=1e-9)


class TestGradient:
    def test_zero_at_consistent_data_lam0(self):
        X, k, coils = tiny_problem()
        g = cs_gradient(X, k, coils, lam=0.0, eps=1e-3)
        assert np.abs(g).max() < 1e-9 * np.abs(X).max()

    def test_constant_in_time_has_no_tv_component(self):
        X, k, coils = tiny_problem()
        Xc = np.broadcast_to(X[0], X.shape).copy()
        g_data = cs_gradient(Xc, k, coils, lam=0.0, eps=1e-3)
        g_full = cs_gradient(Xc, k, coils, lam=7.0, eps=1e-3)
        npt.assert_allclose(g_full, g_data, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("lam", [0.0, 0.5])
    def test_finite_difference_agreement(self, lam):
        rng = np.random.default_rng(11)
        X, k, coils = tiny_problem()
        X = X + 0.3 * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
        eps = 1e-3
        g = cs_gradient(X, k, coils, lam, eps)
        for trial in range(5):
            D = rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape)
            h = 1e-6
            fp = cs_objective(X + h * D, k, coils, lam, eps)
            fm = cs_objective(X - h * D, k, coils, lam, eps)
            fd = (fp - fm) / (2 * h)
            an = float(np.real(np.vdot(g, D)))
            assert abs(fd - an) / max(abs(fd), 1e-12) < 1e-4


@pytest.fixture(scope="module")
def phantom_acq():
    gt = render_phantom(default_spec(n_frames=10))
    coils = make_coils(64, 4, seed=3)
    k = kspace.simulate_acquisition(gt, coils, 13, noise_sigma=0.03, seed=5)
    return gt, coils, k


class TestReconstructCS:
    def test_lam0_is_inufft(self, phantom_acq):
        _, coils, k = phantom_acq
        res = reconstruct_cs(k, coils, CSConfig(lam=0.0))
        npt.assert_array_equal(res.images, inufft_seq(k, coils))

    def test_objective_non_increasing(self, phantom_acq):
        _, coils, k = phantom_acq
        res = reconstruct_cs(k, coils, CSConfig(lam=0.0125, n_iters=8))
        obj = res.objectives
        assert len(obj) >= 2
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(obj, obj[1:]))

    def test_regularization_reduces_temporal_tv(self, phantom_acq):
        _, coils, k = phantom_acq
        base = reconstruct_cs(k, coils, CSConfig(lam=0.0))
        reg = reconstruct_cs(k, coils, CSConfig(lam=0.125, n_iters=8))
        assert temporal_tv(reg.images) < temporal_tv(base.images)

    def test_deterministic(self, phantom_acq):
        _, coils, k = phantom_acq
        a = reconstruct_cs(k, coils, CSConfig(lam=0.0125, n_iters=4))
        b = reconstruct_cs(k, coils, CSConfig(lam=0.0125, n_iters=4))
        npt.assert_array_equal(a.images, b.images)
        assert a.objectives == b.objectives

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CSConfig(lam=-1.0)
        with pytest.raises(ValueError):
            CSConfig(lam=0.1, n_iters=0)
        with pytest.raises(ValueError):
            CSConfig(lam=0.1, tv_eps=0.0)
