import math

import numpy as np
import pytest

from src.errors import ColorSpaceError, ShapeError
from src.services.color_space import (
    ColorSpace,
    ColorTensor,
    hue_distance,
    image_to_lab,
    lab_to_lch,
    lab_to_srgb,
    srgb_to_lab,
)
from src.tensor import Tensor, backward, grad_check
from tests.oracles import srgb_to_lab_scalar


def pixels(*colors):
    """1×3×1×K tensor of sRGB or LAB triples."""
    arr = np.asarray(colors, dtype=np.float64).T.reshape(1, 3, 1, len(colors))
    return Tensor(arr)


def srgb(*colors):
    return ColorTensor(pixels(*colors), ColorSpace.SRGB01)


def as_triples(color: ColorTensor):
    return color.tensor.data[0, :, 0, :].T


class TestSrgbToLab:
    def test_white_and_black(self):
        lab = as_triples(srgb_to_lab(srgb((1, 1, 1), (0, 0, 0))))
        np.testing.assert_allclose(lab[0], [100.0, 0.0, 0.0], atol=1e-4)
        np.testing.assert_allclose(lab[1], [0.0, 0.0, 0.0], atol=1e-9)

    def test_mid_gray_against_reference(self):
        lab = as_triples(srgb_to_lab(srgb((0.5, 0.5, 0.5))))[0]
        expected = srgb_to_lab_scalar(0.5, 0.5, 0.5)
        assert lab[0] == pytest.approx(expected[0], abs=1e-4)
        assert abs(lab[1]) < 1e-9 and abs(lab[2]) < 1e-9

    def test_random_colors_against_reference(self, rng):
        colors = rng.uniform(0.0, 1.0, size=(50, 3))
        lab = as_triples(srgb_to_lab(srgb(*colors)))
        expected = np.array([srgb_to_lab_scalar(*c) for c in colors])
        np.testing.assert_allclose(lab, expected, atol=2e-4)

    def test_gray_axis_is_achromatic_and_monotone(self):
        grays = np.linspace(0.0, 1.0, 21)
        lab = as_triples(srgb_to_lab(srgb(*[(g, g, g) for g in grays])))
        np.testing.assert_allclose(lab[:, 1:], 0.0, atol=1e-9)
        assert np.all(np.diff(lab[:, 0]) > 0)
        lch = as_triples(lab_to_lch(srgb_to_lab(srgb(*[(g, g, g) for g in grays]))))
        np.testing.assert_allclose(lch[:, 1], 0.0, atol=1e-6)

    def test_wrong_tag(self):
        lab = ColorTensor(pixels((50, 0, 0)), ColorSpace.LAB)
        with pytest.raises(ColorSpaceError):
            srgb_to_lab(lab)

    def test_requires_three_channels(self):
        with pytest.raises(ShapeError):
            ColorTensor(Tensor(np.zeros((1, 2, 2, 2))), ColorSpace.SRGB01)

    def test_gradients_away_from_breakpoints(self, rng):
        x = Tensor(rng.uniform(0.1, 0.9, size=(1, 3, 3, 3)))
        error = grad_check(lambda t: srgb_to_lab(ColorTensor(t, ColorSpace.SRGB01)).tensor, x)
        assert error < 1e-4


class TestLabToSrgb:
    def test_round_trip_primary(self):
        back = as_triples(lab_to_srgb(srgb_to_lab(srgb((1, 0, 0)))))[0]
        np.testing.assert_allclose(back, [1.0, 0.0, 0.0], atol=1e-5)

    def test_round_trip_random_colors(self, rng):
        colors = rng.uniform(0.0, 1.0, size=(1000, 3))
        back = as_triples(lab_to_srgb(srgb_to_lab(srgb(*colors))))
        assert np.max(np.abs(back - colors)) < 1e-5

    def test_white_point(self):
        rgb = lab_to_srgb(ColorTensor(pixels((100, 0, 0)), ColorSpace.LAB))
        np.testing.assert_allclose(as_triples(rgb)[0], [1.0, 1.0, 1.0], atol=1e-5)
        assert not rgb.out_of_gamut.any()

    def test_out_of_gamut_is_clamped_and_flagged(self):
        rgb = lab_to_srgb(ColorTensor(pixels((50, 120, -120), (50, 0, 0)), ColorSpace.LAB))
        values = as_triples(rgb)
        assert np.all((values >= 0.0) & (values <= 1.0))
        np.testing.assert_array_equal(rgb.out_of_gamut[0, 0], [True, False])


class TestLabToLch:
    def test_pythagorean_values(self):
        lch = as_triples(lab_to_lch(ColorTensor(pixels((40, 3, 4)), ColorSpace.LAB)))[0]
        np.testing.assert_allclose(lch, [40.0, 5.0, math.atan2(4, 3)], atol=1e-12)

    def test_degenerate_chroma(self):
        lab = Tensor(pixels((60, 0, 0)).data, requires_grad=True)
        lch = lab_to_lch(ColorTensor(lab, ColorSpace.LAB))
        np.testing.assert_array_equal(as_triples(lch)[0], [60.0, 0.0, 0.0])
        grads = backward(lch.tensor)
        assert np.all(np.isfinite(grads[lab]))
        assert grads[lab][0, 1:, 0, 0].tolist() == [0.0, 0.0]

    def test_chroma_gradient(self):
        lab = Tensor(pixels((50, 3, 4)).data, requires_grad=True)
        lch = lab_to_lch(ColorTensor(lab, ColorSpace.LAB)).tensor
        seed = np.zeros(lch.shape)
        seed[:, 1] = 1.0
        grad = backward(lch, seed)[lab][0, :, 0, 0]
        np.testing.assert_allclose(grad, [0.0, 0.6, 0.8], atol=1e-12)

    def test_gradients(self, rng):
        lab = rng.uniform(-60.0, 60.0, size=(1, 3, 3, 3))
        lab[:, 0] = rng.uniform(10.0, 90.0, size=(1, 3, 3))
        error = grad_check(lambda t: lab_to_lch(ColorTensor(t, ColorSpace.LAB)).tensor, Tensor(lab))
        assert error < 1e-4

    def test_chroma_non_negative_and_hue_range(self, rng):
        colors = rng.uniform(0.0, 1.0, size=(200, 3))
        lch = as_triples(lab_to_lch(srgb_to_lab(srgb(*colors))))
        assert np.all(lch[:, 1] >= 0.0)
        assert np.all((lch[:, 2] > -math.pi) & (lch[:, 2] <= math.pi))

    def test_wrong_tag(self):
        with pytest.raises(ColorSpaceError):
            lab_to_lch(srgb((0.2, 0.3, 0.4)))


class TestHueDistance:
    def test_examples(self):
        assert hue_distance(0.0, 0.0) == 0.0
        assert hue_distance(math.pi - 0.1, -math.pi + 0.1) == pytest.approx(0.2)

    def test_properties(self, rng):
        for h1, h2, h3 in rng.uniform(-math.pi, math.pi, size=(500, 3)):
            d12 = hue_distance(h1, h2)
            assert 0.0 <= d12 <= math.pi
            assert d12 == pytest.approx(hue_distance(h2, h1))
            assert d12 <= hue_distance(h1, h3) + hue_distance(h3, h2) + 1e-12


def test_image_to_lab_layout():
    img = np.zeros((2, 3, 3))
    img[0, 0] = 1.0
    lab = image_to_lab(img)
    assert lab.shape == (2, 3, 3)
    assert lab[0, 0, 0] == pytest.approx(100.0, abs=1e-4)
    assert lab[1, 2, 0] == pytest.approx(0.0, abs=1e-9)
