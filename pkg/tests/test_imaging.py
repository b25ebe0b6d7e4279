"""Image I/O, degradation operators, and the Sobel magnitude map."""

import os

import numpy as np
import pytest

from dasr.imaging import (DegradationSpec, Image, add_gaussian_noise,
                          bicubic_resize, degrade, gaussian_blur, load_image,
                          random_paired_crop, save_image, sobel_map, to_luma)
from dasr.pngio import ImageFormatError


def sobel_oracle(gray):
    """Scalar double-loop Sobel magnitude on the valid region."""
    gh_k = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    gv_k = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]]
    h, w = gray.shape
    out = np.zeros((h - 2, w - 2))
    for i in range(h - 2):
        for j in range(w - 2):
            gh = gv = 0.0
            for a in range(3):
                for b in range(3):
                    gh += gh_k[a][b] * gray[i + a, j + b]
                    gv += gv_k[a][b] * gray[i + a, j + b]
            out[i, j] = np.sqrt(gh * gh + gv * gv)
    return out


class TestIO:
    def test_pgm_byte_scaling(self, tmp_path):
        p = tmp_path / "tiny.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
        img = load_image(str(p))
        assert img.channels == 1 and img.height == 2 and img.width == 2
        assert np.allclose(img.array[:, :, 0], [[0, 1], [0, 1]])

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = Image(np.floor(rng.random((7, 5, 3)) * 256) / 255.0)
        for ext in ("png", "ppm"):
            path = str(tmp_path / f"rt.{ext}")
            save_image(img, path)
            back = load_image(path)
            assert np.allclose(back.array, img.array)

    def test_rgb_png_extents(self, tmp_path):
        img = Image(np.zeros((3, 4, 3)))  # height 3, width 4
        path = str(tmp_path / "rgb.png")
        save_image(img, path)
        back = load_image(path)
        assert back.channels == 3 and back.height == 3 and back.width == 4

    def test_quantization_rules(self, tmp_path):
        img = Image(np.array([[[1.0], [127 / 255.0]], [[1.7 - 0.7], [0.0]]]))
        # 1.7 cannot be stored in an Image; check the clamp via save of a
        # raw array pushed through the quantizer instead
        from dasr.imaging import quantize8
        assert quantize8(img)[0, 0, 0] == 255
        assert quantize8(img)[0, 1, 0] == 127
        over = Image.__new__(Image)
        over.array = np.array([[[1.7]]])
        assert quantize8(over)[0, 0, 0] == 255

    def test_unsupported_file_errors_mention_path(self, tmp_path):
        p = tmp_path / "junk.dat"
        p.write_bytes(b"not an image")
        with pytest.raises(ImageFormatError, match="junk.dat"):
            load_image(str(p))
        with pytest.raises(FileNotFoundError):
            load_image(str(tmp_path / "missing.png"))

    def test_pgm_rejects_multichannel(self, tmp_path):
        with pytest.raises(ImageFormatError, match="PGM"):
            save_image(Image(np.zeros((4, 4, 3))), str(tmp_path / "x.pgm"))


class TestToLuma:
    def test_gray_identity(self):
        img = Image(np.random.default_rng(1).random((4, 4, 1)))
        assert to_luma(img) is img

    def test_white_is_one(self):
        img = Image(np.ones((2, 2, 3)))
        assert np.allclose(to_luma(img).array, 1.0)

    def test_rec601_red(self):
        img = Image(np.zeros((1, 1, 3)))
        img.array[0, 0, 0] = 1.0
        assert to_luma(img).array[0, 0, 0] == pytest.approx(0.299)


def bicubic_ref(arr, out_h, out_w):
    """Scalar reference: evaluate the a=-0.5 cubic kernel directly."""
    def kernel(t, a=-0.5):
        t = abs(t)
        if t <= 1:
            return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
        if t < 2:
            return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
        return 0.0

    def axis_sample(vec, n_out):
        n_in = len(vec)
        scale = n_in / n_out
        support = 2.0 * max(scale, 1.0)
        out = np.zeros(n_out)
        for i in range(n_out):
            center = (i + 0.5) * scale - 0.5
            lo = int(np.floor(center - support)) + 1
            ws, vs = [], []
            for j in range(lo, lo + int(np.ceil(support)) * 2 + 1):
                t = (j - center) / scale if scale > 1 else (j - center)
                wgt = kernel(t)
                ws.append(wgt)
                vs.append(vec[min(max(j, 0), n_in - 1)])
            ws = np.array(ws)
            out[i] = float(np.dot(ws / ws.sum(), vs))
        return out

    tmp = np.stack([axis_sample(arr[:, c], out_h)
                    for c in range(arr.shape[1])], axis=1)
    return np.stack([axis_sample(tmp[r, :], out_w)
                     for r in range(out_h)], axis=0)


class TestBicubic:
    def test_constant_preserved(self):
        img = Image(np.full((9, 7, 1), 0.42))
        for (h, w) in [(4, 3), (18, 14), (9, 7)]:
            out = bicubic_resize(img, h, w)
            assert np.abs(out.array - 0.42).max() < 1e-6

    def test_identity_resize(self):
        rng = np.random.default_rng(2)
        img = Image(rng.random((8, 6, 1)))
        out = bicubic_resize(img, 8, 6)
        assert np.abs(out.array - img.array).max() < 1e-6

    def test_downscale_matches_scalar_reference(self):
        ramp = np.linspace(0, 1, 64).reshape(8, 8)
        img = Image(ramp[:, :, None])
        got = bicubic_resize(img, 4, 4).array[:, :, 0]
        want = np.clip(bicubic_ref(ramp, 4, 4), 0, 1)
        assert np.abs(got - want).max() < 1e-5

    def test_random_resizes_match_reference(self):
        rng = np.random.default_rng(3)
        arr = rng.random((10, 9))
        img = Image(arr[:, :, None])
        for (h, w) in [(5, 4), (20, 18), (7, 13)]:
            got = bicubic_resize(img, h, w).array[:, :, 0]
            want = np.clip(bicubic_ref(arr, h, w), 0, 1)
            assert np.abs(got - want).max() < 1e-5


class TestGaussianBlur:
    def test_sigma_zero_identity(self):
        rng = np.random.default_rng(4)
        img = Image(rng.random((6, 6, 1)))
        assert np.array_equal(gaussian_blur(img, 0.0).array, img.array)

    def test_constant_unchanged(self):
        img = Image(np.full((12, 12, 1), 0.3))
        for sigma in (1.0, 3.0, 5.0):
            out = gaussian_blur(img, sigma)
            assert np.abs(out.array - 0.3).max() < 1e-6

    def test_impulse_center_weight(self):
        img = Image(np.zeros((15, 15, 1)))
        img.array[7, 7, 0] = 1.0
        out = gaussian_blur(img, 1.0)
        radius = 3  # ceil(3 * sigma)
        xs = np.arange(-radius, radius + 1)
        k = np.exp(-(xs ** 2) / 2.0)
        k /= k.sum()
        assert out.array[7, 7, 0] == pytest.approx(k[radius] ** 2, abs=1e-9)

    def test_never_widens_range(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            img = Image(rng.random((10, 10, 1)))
            rng_in = img.array.max() - img.array.min()
            for sigma in (0.5, 2.0):
                out = gaussian_blur(img, sigma).array
                assert out.max() - out.min() <= rng_in + 1e-12


class TestNoise:
    def test_sigma_zero_identity(self):
        img = Image(np.full((4, 4, 1), 0.5))
        assert np.array_equal(add_gaussian_noise(img, 0.0, 1).array,
                              img.array)

    def test_deterministic_per_seed(self):
        img = Image(np.full((8, 8, 1), 0.5))
        a = add_gaussian_noise(img, 0.1, 42).array
        b = add_gaussian_noise(img, 0.1, 42).array
        c = add_gaussian_noise(img, 0.1, 43).array
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_sample_std_matches_sigma(self):
        img = Image(np.full((64, 64, 1), 0.5))
        out = add_gaussian_noise(img, 0.1, 7)
        std = float((out.array - img.array).std())
        assert 0.08 < std < 0.12


class TestSobelMap:
    def test_constant_is_zero(self):
        assert np.allclose(sobel_map(Image(np.full((6, 6, 1), 0.4))).array,
                           0.0)

    def test_horizontal_ramp_is_8(self):
        ramp = np.tile(np.arange(6, dtype=float), (6, 1))
        out = sobel_map(Image(ramp[:, :, None]))
        assert np.allclose(out.array, 8.0)

    def test_diagonal_ramp_is_8_sqrt2(self):
        yy, xx = np.meshgrid(np.arange(6.0), np.arange(6.0), indexing="ij")
        out = sobel_map(Image((yy + xx)[:, :, None]))
        assert np.allclose(out.array, 8.0 * np.sqrt(2.0))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            gray = rng.random((8, 8))
            got = sobel_map(Image(gray[:, :, None])).array
            assert np.abs(got - sobel_oracle(gray)).max() < 1e-6
            assert got.min() >= 0.0

    def test_too_small_errors(self):
        with pytest.raises(ValueError, match="smaller than 3x3"):
            sobel_map(Image(np.zeros((2, 5, 1))))


class TestRandomPairedCrop:
    def _pair(self, lh=6, lw=8, scale=2):
        rng = np.random.default_rng(7)
        lr = Image(rng.random((lh, lw, 1)))
        hr = Image(rng.random((scale * lh, scale * lw, 1)))
        return lr, hr

    def test_full_extent_crop_is_identity(self):
        lr, hr = self._pair(6, 6)
        lc, hc = random_paired_crop(lr, hr, 6, 2, seed=1)
        assert np.array_equal(lc.array, lr.array)
        assert np.array_equal(hc.array, hr.array)

    def test_same_seed_same_offsets(self):
        lr, hr = self._pair()
        a = random_paired_crop(lr, hr, 4, 2, seed=5)
        b = random_paired_crop(lr, hr, 4, 2, seed=5)
        assert np.array_equal(a[0].array, b[0].array)
        assert np.array_equal(a[1].array, b[1].array)

    def test_hr_corner_is_scale_times_offset(self):
        lh, lw, s = 6, 8, 2
        lr = Image((np.arange(lh * lw, dtype=float) / (lh * lw))
                   .reshape(lh, lw, 1))
        hr = Image((np.arange(lh * lw * s * s, dtype=float)
                    / (lh * lw * s * s)).reshape(s * lh, s * lw, 1))
        lc, hc = random_paired_crop(lr, hr, 3, s, seed=9)
        # find the LR offset by value, then check HR alignment
        top_left = lc.array[0, 0, 0]
        flat_idx = int(round(top_left * lh * lw))
        oy, ox = divmod(flat_idx, lw)
        assert np.array_equal(
            hc.array, hr.array[s * oy:s * oy + s * 3, s * ox:s * ox + s * 3])

    def test_precondition_errors_name_extents(self):
        lr, hr = self._pair(6, 8, 2)
        with pytest.raises(ValueError, match="13x16"):
            random_paired_crop(lr, Image(np.zeros((13, 16, 1))), 4, 2, 1)
        with pytest.raises(ValueError, match="exceeds"):
            random_paired_crop(lr, hr, 7, 2, 1)


class TestDegrade:
    def test_blur_then_down_then_noise(self):
        rng = np.random.default_rng(8)
        hr = Image(rng.random((16, 16, 1)))
        spec = DegradationSpec(scale=2, blur_sigma=1.0, noise_sigma=0.05,
                               seed=3)
        lr = degrade(hr, spec, sample_seed=11)
        assert (lr.height, lr.width) == (8, 8)
        # reproduce by composing the pieces in the documented order
        manual = add_gaussian_noise(
            bicubic_resize(gaussian_blur(hr, 1.0), 8, 8), 0.05, 11)
        assert np.array_equal(lr.array, manual.array)
