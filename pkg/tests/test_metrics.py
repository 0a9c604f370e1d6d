import math

import numpy as np
import pandas as pd
import pytest

from src.errors import ConfigError, ShapeError
from src.services.losses import ssim_loss
from src.services.metrics import (
    PSNR_CAP,
    UCIQE_COEFFICIENTS,
    evaluate_pairs,
    psnr,
    ssim_metric,
    summarize,
    uciqe,
    write_metrics_csv,
)
from src.tensor import Tensor
from tests.factories import random_image
from tests.oracles import psnr_loops, srgb_to_lab_scalar


class TestPSNR:
    def test_known_value(self):
        assert psnr(np.full((4, 4, 3), 0.5), np.full((4, 4, 3), 0.6)) == pytest.approx(20.0, abs=1e-9)

    def test_identical_is_capped(self, rng):
        img = random_image(rng, 8, 8)
        assert psnr(img, img) == PSNR_CAP

    def test_matches_loops(self, rng):
        a, b = random_image(rng, 6, 5), random_image(rng, 6, 5)
        assert psnr(a, b) == pytest.approx(psnr_loops(a, b), abs=1e-9)

    def test_decreasing_in_error(self):
        ref = np.full((4, 4, 3), 0.5)
        scores = [psnr(ref + offset, ref) for offset in (0.01, 0.02, 0.05, 0.1)]
        assert all(a > b for a, b in zip(scores, scores[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSSIMMetric:
    def test_identical_is_one(self, rng):
        img = random_image(rng, 16, 16)
        assert ssim_metric(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_accepts_tensors(self, rng):
        a, b = random_image(rng, 16, 16), random_image(rng, 16, 16)
        batched = [Tensor(x.transpose(2, 0, 1)[None].astype(np.float64)) for x in (a, b)]
        assert ssim_metric(*batched) == pytest.approx(ssim_metric(a, b), abs=1e-12)

    def test_agrees_with_loss(self, rng):
        a, b = random_image(rng, 16, 16), random_image(rng, 16, 16)
        batched = [Tensor(x.transpose(2, 0, 1)[None].astype(np.float64)) for x in (a, b)]
        assert 1.0 - ssim_metric(a, b) == pytest.approx(ssim_loss(*batched).item(), abs=1e-7)

    def test_noise_lowers_score(self, rng):
        img = random_image(rng, 24, 24)
        noisy = np.clip(img + rng.normal(0.0, 0.3, size=img.shape), 0.0, 1.0)
        assert ssim_metric(noisy, img) < 0.9


class TestUCIQE:
    def test_gray_scores_zero(self):
        assert uciqe(np.full((8, 8, 3), 0.5)) == pytest.approx(0.0, abs=1e-8)

    def test_full_contrast(self):
        img = np.zeros((8, 8, 3))
        img[:, 4:] = 1.0
        assert uciqe(img) == pytest.approx(UCIQE_COEFFICIENTS[1], abs=1e-5)

    def test_saturation_variants(self):
        lightness, a, b = srgb_to_lab_scalar(1.0, 0.0, 0.0)
        chroma = math.hypot(a, b)
        red = np.zeros((4, 4, 3))
        red[..., 0] = 1.0
        weight = UCIQE_COEFFICIENTS[2]
        assert uciqe(red, "cl2") == pytest.approx(weight * chroma / math.hypot(chroma, lightness), rel=1e-4)
        assert uciqe(red, "c_over_l") == pytest.approx(weight * chroma / lightness, rel=1e-4)

    def test_two_tone_terms(self):
        lightness, a, b = srgb_to_lab_scalar(1.0, 0.0, 0.0)
        chroma = math.hypot(a, b)
        img = np.zeros((8, 8, 3))
        img[:, :4, 0] = 1.0
        c1, c2, c3 = UCIQE_COEFFICIENTS
        # half red, half black: chroma spread C/2 and contrast L, both on the /100 scale
        expected = c1 * chroma / 200.0 + c2 * lightness / 100.0 + c3 * chroma / math.hypot(chroma, lightness) / 2.0
        assert uciqe(img) == pytest.approx(expected, rel=1e-4)

    def test_colorful_beats_gray(self):
        red = np.zeros((4, 4, 3))
        red[..., 0] = 1.0
        assert uciqe(red) > uciqe(np.full((4, 4, 3), 0.5))

    def test_invariant_to_flips_and_rotation(self, rng):
        img = random_image(rng, 12, 12)
        score = uciqe(img)
        for variant in (img[::-1], img[:, ::-1], np.rot90(img)):
            assert uciqe(np.ascontiguousarray(variant)) == pytest.approx(score, rel=1e-9)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            uciqe(np.zeros((2, 2, 3)), "hsv")


class TestEvaluation:
    def triples(self, rng, count=4):
        return [
            (f"img_{i}.png", random_image(rng, 16, 16), random_image(rng, 16, 16))
            for i in range(count)
        ]

    def test_parallel_keeps_order_and_values(self, rng):
        items = self.triples(rng)
        serial, summary = evaluate_pairs(items)
        parallel, _ = evaluate_pairs(items, workers=3)
        assert [r.image_id for r in parallel] == [item[0] for item in items]
        assert [r.model_dump() for r in parallel] == [r.model_dump() for r in serial]
        assert summary["psnr"] == pytest.approx(np.mean([r.psnr for r in serial]))

    def test_empty_summary(self):
        assert all(math.isnan(value) for value in summarize([]).values())

    def test_csv_has_mean_row(self, rng, tmp_path):
        records, summary = evaluate_pairs(self.triples(rng, 3))
        path = write_metrics_csv(records, tmp_path / "out" / "metrics.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["image_id", "psnr", "ssim", "uciqe"]
        assert len(frame) == 4
        assert frame.iloc[-1]["image_id"] == "mean"
        assert frame.iloc[-1]["psnr"] == pytest.approx(summary["psnr"], abs=1e-6)
