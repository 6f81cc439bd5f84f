import numpy as np
import numpy.testing as npt
import pytest

from dcedp import kspace
from dcedp.latent import (
    FeatureMap,
    LatentSeq,
    PhaseClustering,
    build_latent_pipeline,
    cluster_phases,
    design_latent,
    feature_map,
)
from dcedp.kspace import make_coils
from dcedp.phantom import default_spec, render_phantom


def ramp_feature(T=55):
    proj = np.zeros((5, T))
    proj[0] = np.linspace(0.0, 1.0, T)
    return FeatureMap(projections=proj, singular_values=np.ones(5))


class TestFeatureMap:
    def test_static_sequence_all_zero(self):
        X = np.ones((8, 6, 6), dtype=complex) * (1 + 2j)
        fm = feature_map(X)
        npt.assert_allclose(fm.projections, 0.0, atol=1e-10)

    def test_rank_one_dynamics(self):
        rng = np.random.default_rng(0)
        T = 12
        u = rng.standard_normal((6, 6))
        c = np.linspace(1.0, 3.0, T) ** 2
        X = (c[:, None, None] * u[None]).astype(complex)
        fm = feature_map(X)
        # leading projection recovers c up to affine transform and sign
        r = np.corrcoef(fm.projections[0], c)[0, 1]
        assert abs(r) > 1 - 1e-10
        assert np.all(fm.singular_values[1:] < 1e-8 * fm.singular_values[0])

    def test_requires_enough_frames(self):
        with pytest.raises(ValueError):
            feature_map(np.ones((3, 4, 4), dtype=complex), n_components=5)


class TestClusterPhases:
    def test_monotone_ramp_boundaries(self):
        clust = cluster_phases(ramp_feature())
        expected = (1, 12, 23, 34, 45, 55)
        for got, want in zip(clust.boundaries, expected):
            assert abs(got - want) <= 1

    def test_constant_projection_uniform_fallback(self):
        fm = FeatureMap(projections=np.zeros((5, 55)), singular_values=np.zeros(5))
        clust = cluster_phases(fm)
        gaps = np.diff(clust.boundaries)
        assert clust.boundaries[0] == 1 and clust.boundaries[-1] == 55
        assert len(gaps) == 5
        assert gaps.max() - gaps.min() <= 1

    def test_sign_flip_invariance(self):
        fm = ramp_feature()
        flipped = FeatureMap(projections=-fm.projections,
                             singular_values=fm.singular_values)
        assert cluster_phases(fm).boundaries == cluster_phases(flipped).boundaries

    def test_rejects_short_sequences(self):
        with pytest.raises(ValueError):
            cluster_phases(ramp_feature(T=9))

    def test_fuzz_always_valid(self):
        rng = np.random.default_rng(42)
        for trial in range(200):
            T = int(rng.integers(10, 90))
            proj = np.zeros((5, T))
            kind = trial % 4
            if kind == 0:
                proj[0] = rng.standard_normal(T)
            elif kind == 1:
                proj[0] = np.cumsum(rng.standard_normal(T))
            elif kind == 2:
                proj[0] = rng.choice([0.0, 1.0], size=T)
            else:
                proj[0] = np.full(T, rng.standard_normal())
            clust = cluster_phases(FeatureMap(projections=proj,
                                              singular_values=np.ones(5)))
            b = np.asarray(clust.boundaries)
            assert b[0] == 1 and b[-1] == T
            assert len(b) == 6
            assert np.all(np.diff(b) >= 1)


class TestDesignLatent:
    @pytest.fixture()
    def latent(self):
        clust = cluster_phases(ramp_feature())
        return design_latent(clust, m=32, segment_length=1.0, seed=7)

    def test_equidistant_within_phase(self, latent):
        b = latent.boundaries
        for i in range(5):
            seg = latent.z[b[i] - 1:b[i + 1]]
            steps = np.linalg.norm(np.diff(seg, axis=0), axis=1)
            npt.assert_allclose(steps, steps[0], rtol=1e-10)

    def test_continuity_and_length(self, latent):
        b = latent.boundaries
        for i in range(5):
            start = latent.z[b[i] - 1]
            end = latent.z[b[i + 1] - 1]
            assert np.linalg.norm(end - start) == pytest.approx(1.0, rel=1e-12)

    def test_collinearity(self, latent):
        b = latent.boundaries
        for i in range(5):
            seg = latent.z[b[i] - 1:b[i + 1]] - latent.z[b[i] - 1]
            norms = np.linalg.norm(seg[1:], axis=1)
            dots = seg[1:] @ latent.directions[i]
            npt.assert_allclose(dots, norms, rtol=1e-10)

    def test_deterministic(self):
        clust = cluster_phases(ramp_feature())
        a = design_latent(clust, 16, 2.0, seed=3)
        b = design_latent(clust, 16, 2.0, seed=3)
        npt.assert_array_equal(a.z, b.z)
        c = design_latent(clust, 16, 2.0, seed=4)
        assert np.abs(a.z - c.z).max() > 1e-6

    def test_total_span_triangle_inequality(self, latent):
        assert np.linalg.norm(latent.z[-1] - latent.z[0]) <= 5.0 + 1e-9

    def test_validation(self):
        clust = cluster_phases(ramp_feature())
        with pytest.raises(ValueError):
            design_latent(clust, 0, 1.0, seed=0)
        with pytest.raises(ValueError):
            design_latent(clust, 8, 0.0, seed=0)


class TestPhantomPipeline:
    def test_boundary_near_injection_and_feature_jump(self):
        spec = default_spec()
        gt = render_phantom(spec)
        coils = make_coils(spec.grid_size, 4, seed=3)
        k = kspace.simulate_acquisition(gt, coils, 13, noise_sigma=0.02, seed=11)

        X = np.stack([kspace.inufft(k.frames[t], coils, k.trajectories[t])
                      for t in range(k.n_frames)])
        fm = feature_map(X)
        inj = spec.injection_frame + 1  # 1-based
        jump = int(np.argmax(np.abs(np.diff(fm.projections[0])))) + 1
        assert abs(jump - inj) <= 2

        clust = cluster_phases(fm)
        assert abs(clust.boundaries[1] - inj) <= 2

        z = build_latent_pipeline(k, coils, m=32, segment_length=1.0, seed=5)
        assert z.z.shape == (spec.n_frames, 32)
