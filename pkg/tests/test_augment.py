"""Augmentation: exact flow adaptation, parameter ranges, photometric rules."""

import dataclasses

import numpy as np
import pytest

from flowlite import augment, imageops, scenegen
from flowlite.augment import AugmentRanges, apply_augmentation, identity_spec, sample_augmentation
from flowlite.flowcore import FlowField
from flowlite.scenegen import AffineTransform, GeneratorConfig, Sample


def background_only_sample(seed=0, w=64, h=48):
    """A sample whose flow is one global affine (no sprites)."""
    cfg = GeneratorConfig(width=w, height=h, min_sprites=0, max_sprites=0)
    rng = np.random.default_rng([seed, 0])
    spec = scenegen.sample_scene(cfg, rng)
    return scenegen.render_sample(spec, cfg), spec


def geometric_only(spec):
    return dataclasses.replace(spec, noise_sigma1=0.0, noise_sigma2=0.0,
                               brightness=0.0, contrast=0.0, gamma=1.0,
                               color=(1.0, 1.0, 1.0))


class TestFlowAdaptationExactness:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_closed_form_composition(self, seed):
        sample, _ = background_only_sample(seed)
        spec = geometric_only(sample_augmentation(np.random.default_rng(seed + 50),
                                                  AugmentRanges(), 64, 48))
        out = apply_augmentation(sample, spec, photometric=False)
        a1 = spec.a1.matrix()
        a2 = spec.a2_matrix()
        xs, ys = imageops.pixel_grid(48, 64)
        px, py = imageops.affine_apply(imageops.affine_invert(a1), xs, ys)
        fu, _ = imageops.bilinear_sample(sample.flow.u.astype(np.float64), px, py)
        fv, _ = imageops.bilinear_sample(sample.flow.v.astype(np.float64), px, py)
        eu, ev = imageops.affine_apply(a2, px + fu, py + fv)
        eu -= xs
        ev -= ys
        m = out.flow.valid
        assert m.any()
        assert np.abs(eu - out.flow.u)[m].max() < 1e-6
        assert np.abs(ev - out.flow.v)[m].max() < 1e-6

    def test_identity_spec_is_noop(self):
        sample, _ = background_only_sample(3)
        out = apply_augmentation(sample, identity_spec(), photometric=False)
        assert np.allclose(out.img1, sample.img1, atol=1e-6)
        assert np.abs(out.flow.u - sample.flow.u).max() < 1e-5

    def test_out_of_frame_preimage_invalid(self):
        sample, _ = background_only_sample(4)
        spec = dataclasses.replace(identity_spec(),
                                   a1=AffineTransform(tx=30.0, cx=31.5, cy=23.5))
        out = apply_augmentation(sample, spec, photometric=False)
        assert not out.flow.valid.all()
        assert out.flow.valid.any()


class TestSampledRanges:
    def test_all_ranges_respected(self):
        r = AugmentRanges()
        rng = np.random.default_rng(5)
        n = 100_000
        tmax = r.translation_frac * 64
        rotations, zooms, rel_rot = [], [], []
        for _ in range(n // 100):  # spec objects are costly; draw 1000 specs
            s = sample_augmentation(rng, r, 64, 48)
            assert abs(s.a1.tx) <= tmax and abs(s.a1.ty) <= tmax
            assert abs(s.a1.rotation) <= 17.0
            assert 0.9 <= s.a1.zoom <= 2.0
            assert abs(s.rel.rotation) <= 0.25 * 17.0
            assert 1 + 0.25 * (0.9 - 1) <= s.rel.zoom <= 1 + 0.25 * (2.0 - 1)
            assert abs(s.rel.tx) <= 0.25 * tmax
            assert 0.0 <= s.noise_sigma1 <= 0.04
            assert 0.0 <= s.noise_sigma2 <= 0.04
            assert -0.8 <= s.contrast <= 0.4
            assert 0.7 <= s.gamma <= 1.5
            assert all(0.5 <= c <= 2.0 for c in s.color)
            rotations.append(s.a1.rotation)
            zooms.append(s.a1.zoom)
            rel_rot.append(s.rel.rotation)
        # the draws actually cover their ranges
        assert max(rotations) > 15 and min(rotations) < -15
        assert max(zooms) > 1.9 and min(zooms) < 1.0

    def test_scalar_draw_ranges_bulk(self):
        """10^5 raw draws of each scalar parameter stay in range."""
        r = AugmentRanges()
        rng = np.random.default_rng(6)
        n = 100_000
        assert np.all(np.abs(rng.uniform(-r.translation_frac, r.translation_frac, n)) <= 0.2)
        g = rng.uniform(r.gamma_min, r.gamma_max, n)
        assert g.min() >= 0.7 and g.max() <= 1.5

    def test_brightness_gaussian(self):
        rng = np.random.default_rng(7)
        b = [sample_augmentation(rng, AugmentRanges(), 64, 48).brightness
             for _ in range(2000)]
        assert np.std(b) == pytest.approx(0.2, rel=0.1)
        assert np.mean(b) == pytest.approx(0.0, abs=0.02)


class TestPhotometric:
    def _flat_sample(self, value=0.5):
        img = np.full((8, 8, 3), value, np.float32)
        z = np.zeros((8, 8), np.float32)
        return Sample(img1=img.copy(), img2=img.copy(),
                      flow=FlowField(u=z, v=z), occlusion=np.zeros((8, 8), bool))

    def test_flow_untouched(self):
        sample, _ = background_only_sample(8)
        spec = dataclasses.replace(identity_spec(), brightness=0.1, gamma=1.2,
                                   color=(0.8, 1.1, 1.4), contrast=0.2,
                                   noise_sigma1=0.02, noise_sigma2=0.02)
        out = apply_augmentation(sample, spec, rng=np.random.default_rng(0))
        assert np.abs(out.flow.u - sample.flow.u).max() < 1e-5
        assert not np.allclose(out.img1, sample.img1)

    def test_chromatic_shared_noise_independent(self):
        s = self._flat_sample()
        spec = dataclasses.replace(identity_spec(), color=(0.6, 1.0, 1.4),
                                   noise_sigma1=0.01, noise_sigma2=0.01)
        out = apply_augmentation(s, spec, rng=np.random.default_rng(1))
        # chroma identical across the pair up to the independent noise
        assert np.abs(out.img1.mean(axis=(0, 1)) - out.img2.mean(axis=(0, 1))).max() < 0.01
        assert not np.array_equal(out.img1, out.img2)  # noise differs per frame

    def test_contrast_about_mean(self):
        s = self._flat_sample(0.5)
        spec = dataclasses.replace(identity_spec(), contrast=-0.8)
        out = apply_augmentation(s, spec)
        # constant image is a fixed point of the contrast transform
        assert np.allclose(out.img1, 0.5, atol=1e-6)

    def test_output_clipped(self):
        s = self._flat_sample(0.9)
        spec = dataclasses.replace(identity_spec(), brightness=0.5)
        out = apply_augmentation(s, spec)
        assert out.img1.max() <= 1.0

    def test_gamma_direction(self):
        s = self._flat_sample(0.25)
        out = apply_augmentation(s, dataclasses.replace(identity_spec(), gamma=1.5))
        assert out.img1.mean() < 0.25  # gamma > 1 darkens mid-tones


class TestDeterminism:
    def test_same_rng_same_result(self):
        sample, _ = background_only_sample(9)
        spec = sample_augmentation(np.random.default_rng(10), AugmentRanges(), 64, 48)
        a = apply_augmentation(sample, spec, rng=np.random.default_rng(11))
        b = apply_augmentation(sample, spec, rng=np.random.default_rng(11))
        assert np.array_equal(a.img1, b.img1)
        assert np.array_equal(a.flow.u, b.flow.u)
