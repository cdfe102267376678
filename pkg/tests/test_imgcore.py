import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hybridmot.imgcore import (ColorImage, GrayImage, SamplingOutOfBounds, blur_and_decimate,
                               build_pyramid, sample_bilinear, to_grayscale)


def gray(data):
    return GrayImage(np.asarray(data, dtype=float))


class TestGrayImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            gray([[0, 256]])
        with pytest.raises(ValueError):
            gray([[np.nan, 0]])

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            GrayImage(np.zeros((2, 2, 2)))

    def test_dims_and_readonly(self):
        img = gray(np.zeros((3, 5)))
        assert (img.width, img.height) == (5, 3)
        assert img.data.size == img.width * img.height
        with pytest.raises(ValueError):
            img.data[0, 0] = 1.0


class TestGrayscale:
    def test_white_black_red(self):
        px = np.array([[[255, 255, 255], [0, 0, 0], [255, 0, 0]]], dtype=np.uint8)
        g = to_grayscale(ColorImage(px)).data
        assert g[0, 0] == 255.0
        assert g[0, 1] == 0.0
        assert g[0, 2] == pytest.approx(76.245, abs=1e-9)

    @given(st.integers(0, 255))
    def test_gray_input_exact(self, v):
        px = np.full((2, 2, 3), v, dtype=np.uint8)
        assert np.all(to_grayscale(ColorImage(px)).data == v)

    def test_color_image_shape_checked(self):
        with pytest.raises(ValueError):
            ColorImage(np.zeros((2, 2), dtype=np.uint8))


class TestPyramid:
    def test_constant_image(self):
        pyr = build_pyramid(gray(np.full((40, 50), 100.0)), 3)
        assert len(pyr) == 3
        for level in pyr.levels:
            assert np.allclose(level.data, 100.0, atol=1e-12)

    def test_halving_dims(self):
        pyr = build_pyramid(gray(np.zeros((48, 64))), 3)
        assert [lv.data.shape[::-1] for lv in pyr.levels] == [(64, 48), (32, 24), (16, 12)]

    def test_small_image_single_level(self):
        assert len(build_pyramid(gray(np.zeros((15, 40))), 4)) == 1

    def test_levels_must_be_positive(self):
        with pytest.raises(ValueError):
            build_pyramid(gray(np.zeros((20, 20))), 0)

    def test_step_edge_halves(self):
        data = np.zeros((64, 128))
        data[:, 70:] = 200.0
        pyr = build_pyramid(gray(data), 3)
        for level, img in enumerate(pyr.levels):
            row = img.data[img.height // 2]
            edge = int(np.argmax(np.diff(row))) + 0.5
            assert abs(edge - 69.5 / 2 ** level) <= 1.0

    def test_blur_matches_bruteforce_convolution(self):
        rng = np.random.default_rng(3)
        data = rng.uniform(0, 255, (9, 11))
        k = np.array([1, 4, 6, 4, 1]) / 16.0

        def mirror(i, n):
            if i < 0:
                return -i
            if i >= n:
                return 2 * (n - 1) - i
            return i

        h, w = data.shape
        tmp = np.array([[sum(k[a] * data[mirror(y + a - 2, h), x] for a in range(5))
                         for x in range(w)] for y in range(h)])
        ref = np.array([[sum(k[a] * tmp[y, mirror(x + a - 2, w)] for a in range(5))
                         for x in range(w)] for y in range(h)])
        assert np.allclose(blur_and_decimate(data), ref[::2, ::2][: h // 2, : w // 2], atol=1e-9)

    @given(st.integers(16, 80), st.integers(16, 80), st.integers(1, 5))
    def test_level_dims_rule(self, w, h, levels):
        pyr = build_pyramid(gray(np.zeros((h, w))), levels)
        for level, img in enumerate(pyr.levels):
            assert img.data.shape == (h // 2 ** level, w // 2 ** level)
        # decimation stops once the current level is below 16 on a side
        for img in pyr.levels[:-1]:
            assert img.width >= 16 and img.height >= 16

    def test_idempotent_rebuild(self):
        data = np.random.default_rng(0).uniform(0, 255, (64, 80))
        pyr = build_pyramid(gray(data), 3)
        again = build_pyramid(pyr[1], 2)
        assert np.array_equal(again[1].data, pyr[2].data)


class TestBilinear:
    def test_integer_and_midpoint(self):
        img = gray([[0, 10], [20, 30]])
        assert sample_bilinear(img, 1, 1) == 30.0
        assert sample_bilinear(img, 0.5, 0) == 5.0

    def test_ramp_oracle(self):
        data = np.arange(16, dtype=float).reshape(4, 4) * 7.0
        img = gray(data)
        x, y = 1.25, 2.75
        ref = (data[2, 1] * 0.75 * 0.25 + data[2, 2] * 0.25 * 0.25
               + data[3, 1] * 0.75 * 0.75 + data[3, 2] * 0.25 * 0.75)
        assert sample_bilinear(img, x, y) == pytest.approx(ref, abs=1e-12)

    def test_out_of_bounds(self):
        img = gray(np.zeros((4, 4)))
        for x, y in [(-0.01, 0), (0, 3.01), (3.5, 1)]:
            with pytest.raises(SamplingOutOfBounds):
                sample_bilinear(img, x, y)

    @given(arrays(np.float64, (5, 6), elements=st.floats(0, 255)),
           st.floats(0, 5), st.floats(0, 4))
    def test_bounded_by_neighbours(self, data, x, y):
        v = sample_bilinear(GrayImage(data), x, y)
        x0, y0 = min(int(x), 4), min(int(y), 3)
        block = data[y0:y0 + 2, x0:x0 + 2]
        assert block.min() - 1e-9 <= v <= block.max() + 1e-9
