import math

import numpy as np
import numpy.testing as npt
import pytest

from dcedp import kspace
from dcedp.kspace import (
    GOLDEN_ANGLE,
    CoilSet,
    adjoint,
    forward,
    forward_direct,
    frame_trajectories,
    inufft,
    make_coils,
    make_trajectory,
    simulate_acquisition,
)
from dcedp.phantom import default_spec, render_phantom


def nrmse(x, ref):
    return np.linalg.norm(x - ref) / np.linalg.norm(ref)


def random_image(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


class TestTrajectory:
    def test_spoke_angles(self):
        traj = make_trajectory(8, 64)
        assert traj.angles[0] == 0.0
        assert traj.angles[1] == pytest.approx(1.94161, abs=1e-5)
        npt.assert_allclose(traj.angles, (np.arange(8) * GOLDEN_ANGLE) % math.pi)

    def test_center_crossing_and_range(self):
        traj = make_trajectory(21, 64)
        mid = traj.n_readout // 2
        npt.assert_array_equal(np.hypot(traj.kx[:, mid], traj.ky[:, mid]), 0.0)
        assert np.all(np.hypot(traj.kx, traj.ky) <= 64 / 2 + 1e-12)

    def test_equally_spaced_samples(self):
        traj = make_trajectory(3, 32)
        r = np.hypot(np.diff(traj.kx, axis=1), np.diff(traj.ky, axis=1))
        npt.assert_allclose(r, 1.0, rtol=1e-12)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            make_trajectory(0, 64)
        with pytest.raises(ValueError):
            make_trajectory(4, 1)

    def test_frame_binning_disjoint_cover(self):
        trajs = frame_trajectories(7, 5, grid_size=16)
        seen = np.concatenate([t.spoke_indices for t in trajs])
        npt.assert_array_equal(np.sort(seen), np.arange(35))
        assert len(set(seen.tolist())) == seen.size
        for t, tr in enumerate(trajs):
            npt.assert_array_equal(tr.spoke_indices, np.arange(t * 5, (t + 1) * 5))


class TestCoils:
    def test_single_coil_is_unit_magnitude(self):
        c = make_coils(32, 1, seed=3)
        npt.assert_allclose(np.abs(c.maps[0]), 1.0, atol=1e-12)

    def test_sum_of_squares_normalized(self):
        c = make_coils(48, 4, seed=7)
        sos = np.sum(np.abs(c.maps) ** 2, axis=0)
        npt.assert_allclose(sos, 1.0, atol=1e-12)

    def test_deterministic(self):
        a = make_coils(32, 4, seed=11)
        b = make_coils(32, 4, seed=11)
        npt.assert_array_equal(a.maps, b.maps)


class TestForward:
    def test_zero_image_zero_samples(self):
        traj = make_trajectory(13, 32)
        coils = make_coils(32, 3, seed=0)
        out = forward(np.zeros((32, 32), dtype=complex), coils, traj)
        npt.assert_array_equal(out, 0.0)

    def test_impulse_is_flat(self):
        n = 32
        traj = make_trajectory(13, n)
        coils = CoilSet(np.ones((1, n, n), dtype=complex))
        x = np.zeros((n, n), dtype=complex)
        x[n // 2, n // 2] = 1.0
        got = forward(x, coils, traj)
        ref = forward_direct(x, coils, traj)
        npt.assert_allclose(np.abs(ref), 1.0, atol=1e-12)
        npt.assert_allclose(np.abs(got), 1.0, atol=2e-3)

    @pytest.mark.parametrize("n,c,sp", [(16, 1, 9), (32, 3, 13), (64, 4, 13)])
    def test_matches_direct_dft(self, n, c, sp):
        rng = np.random.default_rng(42 + n)
        traj = make_trajectory(sp, n)
        coils = make_coils(n, c, seed=5)
        x = random_image(rng, n)
        got = forward(x, coils, traj)
        ref = forward_direct(x, coils, traj)
        assert nrmse(got, ref) < 1e-3

    def test_adjointness(self):
        n = 64
        traj = make_trajectory(13, n)
        coils = make_coils(n, 4, seed=1)
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = random_image(rng, n)
            y = rng.standard_normal((4, 13, n)) + 1j * rng.standard_normal((4, 13, n))
            lhs = np.vdot(y, forward(x, coils, traj))
            rhs = np.vdot(adjoint(y, coils, traj), x)
            assert abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)) < 1e-6

    def test_linearity(self):
        n = 32
        traj = make_trajectory(8, n)
        coils = make_coils(n, 2, seed=2)
        rng = np.random.default_rng(9)
        x, y = random_image(rng, n), random_image(rng, n)
        npt.assert_allclose(
            forward(x + 2.0 * y, coils, traj),
            forward(x, coils, traj) + 2.0 * forward(y, coils, traj),
            rtol=1e-12, atol=1e-12,
        )

    def test_rejects_out_of_range_coordinates(self):
        from dcedp.kspace import Trajectory

        good = make_trajectory(4, 16)
        bad = Trajectory(angles=good.angles, kx=3.0 * good.kx, ky=good.ky,
                         n_readout=16, grid_size=16,
                         spoke_indices=good.spoke_indices,
                         golden_angle=good.golden_angle)
        coils = make_coils(16, 1, seed=0)
        with pytest.raises(ValueError, match="trajectory"):
            forward(np.zeros((16, 16), dtype=complex), coils, bad)


class TestInufft:
    def test_zero_samples_zero_image(self):
        traj = make_trajectory(13, 32)
        coils = make_coils(32, 2, seed=0)
        out = inufft(np.zeros((2, 13, 32), dtype=complex), coils, traj)
        npt.assert_array_equal(out, 0.0)

    def test_fully_sampled_static_phantom(self):
        spec = default_spec(n_frames=7)
        gt = render_phantom(spec)
        n = spec.grid_size
        coils = make_coils(n, 4, seed=3)
        traj = make_trajectory(101, 2 * n, grid_size=n)  # >= ceil(pi/2 * 64)
        k = forward(gt.images[0], coils, traj)
        rec = inufft(k, coils, traj)
        assert nrmse(rec, gt.images[0]) < 0.05

    def test_undersampling_degrades_fidelity(self):
        spec = default_spec(n_frames=7)
        gt = render_phantom(spec)
        n = spec.grid_size
        coils = make_coils(n, 4, seed=3)
        full = make_trajectory(101, 2 * n, grid_size=n)
        sparse = make_trajectory(13, 2 * n, grid_size=n)
        e_full = nrmse(inufft(forward(gt.images[0], coils, full), coils, full),
                       gt.images[0])
        e_sparse = nrmse(inufft(forward(gt.images[0], coils, sparse), coils, sparse),
                         gt.images[0])
        assert e_sparse > e_full

    def test_linearity(self):
        n = 32
        traj = make_trajectory(13, n)
        coils = make_coils(n, 2, seed=4)
        rng = np.random.default_rng(5)
        a = rng.standard_normal((2, 13, n)) + 1j * rng.standard_normal((2, 13, n))
        npt.assert_allclose(inufft(2.0 * a, coils, traj), 2.0 * inufft(a, coils, traj),
                            rtol=1e-12, atol=1e-12)

    def test_density_weights_dc_floor(self):
        traj = make_trajectory(5, 16)
        w = kspace.density_weights(traj)
        mid = traj.n_readout // 2
        assert np.all(w > 0)
        # DC weight is half the first nonzero ramp value, up to the per-spoke
        # angular-gap share
        ramp = np.hypot(traj.kx, traj.ky)
        npt.assert_allclose(w[:, mid] / w[:, mid + 1],
                            0.5 * ramp[:, mid + 1] / ramp[:, mid + 1])


@pytest.fixture(scope="module")
def short_gt():
    return render_phantom(default_spec(n_frames=8))


class TestSimulateAcquisition:

    def test_noiseless_matches_forward(self, short_gt):
        gt = short_gt
        coils = make_coils(64, 4, seed=3)
        acq = simulate_acquisition(gt, coils, 13, noise_sigma=0.0, seed=0)
        t = 3
        npt.assert_array_equal(acq.frames[t],
                               forward(gt.images[t], coils, acq.trajectories[t]))

    def test_seed_reproducible(self, short_gt):
        gt = short_gt
        coils = make_coils(64, 4, seed=3)
        a = simulate_acquisition(gt, coils, 13, noise_sigma=0.05, seed=21)
        b = simulate_acquisition(gt, coils, 13, noise_sigma=0.05, seed=21)
        npt.assert_array_equal(a.frames, b.frames)

    def test_noiseless_linearity(self, short_gt):
        gt = short_gt
        coils = make_coils(64, 4, seed=3)
        doubled = render_phantom(default_spec(n_frames=8, m0=2.0))
        a = simulate_acquisition(gt, coils, 13, noise_sigma=0.0, seed=0)
        b = simulate_acquisition(doubled, coils, 13, noise_sigma=0.0, seed=0)
        npt.assert_allclose(b.frames, 2.0 * a.frames, rtol=1e-12, atol=1e-12)

    def test_noise_scales_with_sigma(self, short_gt):
        gt = short_gt
        coils = make_coils(64, 4, seed=3)
        clean = simulate_acquisition(gt, coils, 13, noise_sigma=0.0, seed=7)
        noisy = simulate_acquisition(gt, coils, 13, noise_sigma=0.1, seed=7)
        resid = noisy.frames - clean.frames
        expected = 0.1 * np.mean(np.abs(clean.frames))
        assert np.std(resid) == pytest.approx(expected, rel=0.05)
