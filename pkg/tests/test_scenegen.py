"""Synthetic scene generator: distributions, rendering fidelity, persistence."""

import numpy as np
import pytest
from scipy import stats

from flowlite import imageops, scenegen
from flowlite.flowcore import FlowField
from flowlite.scenegen import (ClampedPowerGaussian, GeneratorConfig, SceneSpec,
                               sample_param, sample_scene)

SMALL = GeneratorConfig(width=64, height=48)


def make_samples(cfg, n, seed=0):
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        out.append(scenegen.render_sample(sample_scene(cfg, rng), cfg))
    return out


class TestParamDistribution:
    def test_clamp_bounds(self):
        dist = ClampedPowerGaussian(3, 0, 2.3, -120, 120, 1.0)
        rng = np.random.default_rng(0)
        draws = np.array([sample_param(dist, rng) for _ in range(5000)])
        assert draws.min() >= -120 and draws.max() <= 120
        # heavy-tailed power transform actually hits the clamps
        assert (np.abs(draws) == 120).any()

    def test_mixture_probability(self):
        # p=0.3: roughly 70% of draws collapse to mu exactly
        dist = ClampedPowerGaussian(2, 0, 1.3, -10, 10, 0.3)
        rng = np.random.default_rng(1)
        draws = np.array([sample_param(dist, rng) for _ in range(20000)])
        frac_mu = np.mean(draws == 0.0)
        assert 0.67 < frac_mu < 0.73

    def test_always_on_mixture(self):
        dist = ClampedPowerGaussian(2, 1, 0.1, 0.93, 1.07, 0.6)
        rng = np.random.default_rng(2)
        draws = np.array([sample_param(dist, rng) for _ in range(5000)])
        assert (draws >= 0.93).all() and (draws <= 1.07).all()

    def test_symmetric_around_mu_zero(self):
        dist = ClampedPowerGaussian(4, 0, 1.3, -40, 40, 1.0)
        rng = np.random.default_rng(3)
        draws = np.array([sample_param(dist, rng) for _ in range(20000)])
        # sign-symmetric construction: two-sided KS between +tail and -tail
        pos = draws[draws > 0]
        neg = -draws[draws < 0]
        assert stats.ks_2samp(pos, neg).pvalue > 0.01

    def test_power_exponent_effect(self):
        """k=1 leaves the Gaussian untouched inside the clamp range."""
        dist = ClampedPowerGaussian(1, 0, 1.0, -100, 100, 1.0)
        rng = np.random.default_rng(4)
        draws = np.array([sample_param(dist, rng) for _ in range(20000)])
        assert stats.kstest(draws, "norm").pvalue > 0.01

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            ClampedPowerGaussian(2, 5, 1.0, -1, 1, 0.5)  # mu outside [a, b]
        with pytest.raises(ValueError):
            ClampedPowerGaussian(2, 0, 1.0, -1, 1, 1.5)  # bad p


class TestSceneSampling:
    def test_sprite_count_range(self):
        counts = []
        for i in range(300):
            spec = sample_scene(SMALL, np.random.default_rng([5, i]))
            counts.append(len(spec.sprites))
        assert min(counts) == 16 and max(counts) == 24
        # uniform over the 9 values
        freq = np.bincount(counts, minlength=25)[16:25]
        assert stats.chisquare(freq).pvalue > 0.001

    def test_sprite_sizes_in_reference_range(self):
        sizes = []
        for i in range(100):
            spec = sample_scene(SMALL, np.random.default_rng([6, i]))
            sizes.extend(sp.size_ref for sp in spec.sprites)
        sizes = np.array(sizes)
        assert sizes.min() >= 50.0 and sizes.max() <= 640.0
        assert (sizes == 50.0).any()  # N(200,200) mass below gets clamped

    def test_translation_scaled_by_width(self):
        wide = GeneratorConfig(width=1024, height=768)
        tx_small, tx_wide = [], []
        for i in range(200):
            tx_small.append(abs(sample_scene(SMALL, np.random.default_rng([7, i])).bg_transform.tx))
            tx_wide.append(abs(sample_scene(wide, np.random.default_rng([7, i])).bg_transform.tx))
        # identical underlying draws, scaled by width ratio
        assert np.allclose(np.array(tx_wide), np.array(tx_small) * 16)

    def test_determinism(self):
        a = sample_scene(SMALL, np.random.default_rng([8, 0]))
        b = sample_scene(SMALL, np.random.default_rng([8, 0]))
        assert a == b

    def test_spec_text_roundtrip(self):
        spec = sample_scene(SMALL, np.random.default_rng([9, 0]))
        assert SceneSpec.from_text(spec.to_text()) == spec


@pytest.fixture(scope="module")
def samples():
    return make_samples(SMALL, 5, seed=10)


class TestRendering:
    def test_shapes_and_ranges(self, samples):
        for s in samples:
            assert s.img1.shape == (48, 64, 3) and s.img1.dtype == np.float32
            assert 0.0 <= s.img1.min() and s.img1.max() <= 1.0
            assert s.flow.u.shape == (48, 64)
            assert s.occlusion.dtype == bool

    def test_flow_matches_affine_oracle(self):
        cfg = SMALL
        for i in range(5):
            rng = np.random.default_rng([11, i])
            spec = sample_scene(cfg, rng)
            s = scenegen.render_sample(spec, cfg)
            pr = np.random.default_rng([12, i])
            xi = pr.integers(0, cfg.width, 20).astype(float)
            yi = pr.integers(0, cfg.height, 20).astype(float)
            us, vs = scenegen.flow_oracle_probe(spec, cfg, s, xi, yi)
            got_u = s.flow.u[yi.astype(int), xi.astype(int)]
            got_v = s.flow.v[yi.astype(int), xi.astype(int)]
            assert np.abs(us - got_u).max() <= 1e-9
            assert np.abs(vs - got_v).max() <= 1e-9

    def test_warp_consistency(self, samples):
        for s in samples:
            assert scenegen.warp_consistency_error(s) < 0.02

    def test_occlusion_fraction_sane(self, samples):
        fracs = [s.occlusion.mean() for s in samples]
        assert 0.0 < np.mean(fracs) < 0.6

    def test_render_determinism(self):
        cfg = SMALL
        spec = sample_scene(cfg, np.random.default_rng([13, 0]))
        a = scenegen.render_sample(spec, cfg)
        b = scenegen.render_sample(spec, cfg)
        assert np.array_equal(a.img1, b.img1)
        assert np.array_equal(a.flow.u, b.flow.u)
        assert np.array_equal(a.occlusion, b.occlusion)


class TestQuartering:
    def test_roundtrip_tiles(self):
        s = make_samples(GeneratorConfig(width=64, height=48), 1, seed=14)[0]
        qs = scenegen.quarter(s)
        assert len(qs) == 4
        top = np.concatenate([qs[0].img1, qs[1].img1], axis=1)
        bottom = np.concatenate([qs[2].img1, qs[3].img1], axis=1)
        assert np.array_equal(np.concatenate([top, bottom], axis=0), s.img1)
        top_u = np.concatenate([qs[0].flow.u, qs[1].flow.u], axis=1)
        bottom_u = np.concatenate([qs[2].flow.u, qs[3].flow.u], axis=1)
        assert np.array_equal(np.concatenate([top_u, bottom_u], axis=0), s.flow.u)

    def test_odd_dimensions_rejected(self):
        z = np.zeros((3, 4), np.float32)
        s = scenegen.Sample(img1=np.zeros((3, 4, 3), np.float32),
                            img2=np.zeros((3, 4, 3), np.float32),
                            flow=FlowField(u=z, v=z),
                            occlusion=np.zeros((3, 4), bool))
        with pytest.raises(ValueError):
            scenegen.quarter(s)

    def test_strict_quadrant_marks_leavers(self):
        u = np.full((4, 4), 10.0, np.float32)  # everything flows out of a 2x2 tile
        s = scenegen.Sample(img1=np.zeros((4, 4, 3), np.float32),
                            img2=np.zeros((4, 4, 3), np.float32),
                            flow=FlowField(u=u, v=np.zeros_like(u)),
                            occlusion=np.zeros((4, 4), bool))
        strict = scenegen.quarter(s, strict_in_quadrant=True)
        assert all(q.occlusion.all() for q in strict)
        loose = scenegen.quarter(s)
        assert not any(q.occlusion.any() for q in loose)


class TestHistogram:
    def test_probabilities_sum_to_one(self):
        flows = [s.flow for s in make_samples(SMALL, 3, seed=15)]
        edges, probs = scenegen.displacement_histogram(flows, 0.5, 10.0)
        assert probs.sum() == pytest.approx(1.0)
        assert len(edges) == len(probs) + 1

    def test_tail_folding(self):
        f = FlowField(u=np.full((2, 2), 100.0, np.float32), v=np.zeros((2, 2), np.float32))
        edges, probs = scenegen.displacement_histogram([f], 1.0, 5.0)
        assert probs[-1] == pytest.approx(1.0)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            scenegen.displacement_histogram([], 1.0, 5.0)


class TestDatasetPersistence:
    def test_layout_and_roundtrip(self, tmp_path):
        cfg = GeneratorConfig(width=32, height=32)
        manifest = scenegen.generate_dataset(cfg, seed=0, n=3, out_dir=tmp_path)
        text = (tmp_path / "manifest.txt").read_text()
        assert "config_hash = " + cfg.hash() in text
        assert "count = 3" in text
        for i in range(3):
            stem = f"{i:07d}"
            for suffix in ("img1.png", "img2.png", "flow.flo", "occ.png", "spec.txt"):
                assert (tmp_path / f"{stem}-{suffix}").exists()
        from flowlite.trainer import DirectoryDataset
        ds = DirectoryDataset(tmp_path)
        assert len(ds) == 3
        s = ds[0]
        assert s.img1.shape == (32, 32, 3)
        assert s.flow.u.shape == (32, 32)

    def test_bit_identical_across_runs(self, tmp_path):
        cfg = GeneratorConfig(width=32, height=32)
        d1, d2 = tmp_path / "a", tmp_path / "b"
        scenegen.generate_dataset(cfg, seed=7, n=2, out_dir=d1)
        scenegen.generate_dataset(cfg, seed=7, n=2, out_dir=d2)
        for f in sorted(p.name for p in d1.iterdir()):
            assert (d1 / f).read_bytes() == (d2 / f).read_bytes(), f

    def test_quartered_dataset(self, tmp_path):
        cfg = GeneratorConfig(width=32, height=32, quarter=True)
        scenegen.generate_dataset(cfg, seed=1, n=5, out_dir=tmp_path)
        from flowlite.trainer import DirectoryDataset
        ds = DirectoryDataset(tmp_path)
        assert len(ds) == 5
        assert ds[0].img1.shape == (32, 32, 3)
