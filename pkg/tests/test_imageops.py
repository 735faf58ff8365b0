"""Bilinear sampling, affine matrix helpers, PNG round-trips."""

import numpy as np
import pytest

from flowlite import imageops


class TestBilinearSample:
    def test_integer_coordinates_exact(self):
        rng = np.random.default_rng(0)
        img = rng.random((5, 7))
        xs, ys = imageops.pixel_grid(5, 7)
        vals, inb = imageops.bilinear_sample(img, xs, ys)
        assert np.allclose(vals, img)
        assert inb.all()

    def test_midpoint_average(self):
        img = np.array([[0.0, 1.0]])
        vals, _ = imageops.bilinear_sample(img, np.array([0.5]), np.array([0.0]))
        assert vals[0] == pytest.approx(0.5)

    def test_oob_zero(self):
        img = np.ones((3, 3))
        vals, inb = imageops.bilinear_sample(img, np.array([-1.0, 5.0]),
                                             np.array([0.0, 0.0]), oob="zero")
        assert (vals == 0).all() and not inb.any()

    def test_oob_clamp(self):
        img = np.arange(9.0).reshape(3, 3)
        vals, inb = imageops.bilinear_sample(img, np.array([-5.0]), np.array([0.0]))
        assert vals[0] == img[0, 0]
        assert not inb[0]

    def test_channel_axis(self):
        img = np.dstack([np.ones((2, 2)), 2 * np.ones((2, 2))])
        vals, _ = imageops.bilinear_sample(img, np.array([0.5]), np.array([0.5]))
        assert vals.shape == (1, 2)
        assert np.allclose(vals, [1.0, 2.0])

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            imageops.bilinear_sample(np.ones((2, 2)), np.zeros(1), np.zeros(1), oob="wrap")


class TestAffine:
    def test_pure_translation(self):
        m = imageops.zoom_rot_translate(1.0, 0.0, 3.0, -2.0, 10.0, 10.0)
        x, y = imageops.affine_apply(m, np.array([1.0]), np.array([1.0]))
        assert x[0] == pytest.approx(4.0) and y[0] == pytest.approx(-1.0)

    def test_rotation_about_pivot_fixes_pivot(self):
        m = imageops.zoom_rot_translate(1.0, 90.0, 0.0, 0.0, 5.0, 5.0)
        x, y = imageops.affine_apply(m, np.array([5.0]), np.array([5.0]))
        assert x[0] == pytest.approx(5.0) and y[0] == pytest.approx(5.0)

    def test_rotation_direction(self):
        # +90 deg maps +x to +y (y-down raster convention)
        m = imageops.zoom_rot_translate(1.0, 90.0, 0.0, 0.0, 0.0, 0.0)
        x, y = imageops.affine_apply(m, np.array([1.0]), np.array([0.0]))
        assert x[0] == pytest.approx(0.0, abs=1e-12)
        assert y[0] == pytest.approx(1.0)

    def test_zoom_about_pivot(self):
        m = imageops.zoom_rot_translate(2.0, 0.0, 0.0, 0.0, 1.0, 1.0)
        x, y = imageops.affine_apply(m, np.array([2.0]), np.array([1.0]))
        assert x[0] == pytest.approx(3.0) and y[0] == pytest.approx(1.0)

    def test_compose_then_invert(self):
        rng = np.random.default_rng(1)
        a = imageops.zoom_rot_translate(1.2, 30.0, 4.0, -1.0, 8.0, 6.0)
        b = imageops.zoom_rot_translate(0.8, -10.0, -2.0, 3.0, 0.0, 0.0)
        m = imageops.affine_compose(a, b)
        minv = imageops.affine_invert(m)
        xs = rng.random(10) * 20
        ys = rng.random(10) * 20
        fx, fy = imageops.affine_apply(m, xs, ys)
        bx, by = imageops.affine_apply(minv, fx, fy)
        assert np.allclose(bx, xs) and np.allclose(by, ys)


class TestResize:
    def test_identity(self):
        rng = np.random.default_rng(2)
        img = rng.random((6, 8))
        assert np.allclose(imageops.resize_bilinear(img, 6, 8), img)

    def test_constant_preserved(self):
        img = np.full((4, 4), 0.3)
        out = imageops.resize_bilinear(img, 9, 7)
        assert out.shape == (9, 7)
        assert np.allclose(out, 0.3)

    def test_mean_roughly_preserved(self):
        rng = np.random.default_rng(3)
        img = rng.random((16, 16))
        out = imageops.resize_bilinear(img, 8, 8)
        assert out.mean() == pytest.approx(img.mean(), abs=0.02)


class TestPngIO:
    def test_roundtrip_rgb(self, tmp_path):
        rng = np.random.default_rng(4)
        img = rng.random((5, 6, 3)).astype(np.float32)
        p = tmp_path / "x.png"
        imageops.save_png(p, img)
        back = imageops.load_png(p)
        assert back.shape == img.shape
        # 8-bit quantization bound
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6

    def test_roundtrip_gray_uint8_exact(self, tmp_path):
        img = np.arange(256, dtype=np.uint8).reshape(16, 16)
        p = tmp_path / "g.png"
        imageops.save_png(p, img)
        back = imageops.load_png(p)
        assert np.array_equal(imageops.to_uint8(back), img)

    def test_uint8_conversion_rounds(self):
        assert imageops.to_uint8(np.array([0.0, 1.0, 0.5]))[2] in (127, 128)
        assert imageops.to_uint8(np.array([2.0]))[0] == 255
