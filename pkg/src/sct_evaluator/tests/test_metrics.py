import math
import unittest

import numpy as np
import pytest

from sct_evaluator.analysis.frechet import BlockMeanEmbedder, embed_slices, fid
from sct_evaluator.analysis.metrics import (
    SsimParams,
    consecutive_slice_mse,
    iou,
    pixel_metrics,
    psnr_from_mse,
    simos,
    ssim,
    ssim_map,
)
from sct_evaluator.data.volume import Slice, extract_transverse_slices, make_volume
from sct_evaluator.errors import DegenerateInputError, DimensionError


def brute_force_ssim(x, y, params=SsimParams()):
    """Direct sliding-window SSIM with explicit per-window weighted moments."""
    w = params.gaussian_window()
    size = params.window
    values = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            px, py = x[i:i + size, j:j + size], y[i:i + size, j:j + size]
            mx, my = np.sum(w * px), np.sum(w * py)
            vx = np.sum(w * (px - mx) ** 2)
            vy = np.sum(w * (py - my) ** 2)
            cxy = np.sum(w * (px - mx) * (py - my))
            values.append(((2 * mx * my + params.c1) * (2 * cxy + params.c2))
                          / ((mx ** 2 + my ** 2 + params.c1) * (vx + vy + params.c2)))
    return float(np.mean(values))


def smooth_target(rng, shape=(64, 64, 16)):
    x, y, z = np.meshgrid(*(np.linspace(0, 1, n) for n in shape), indexing="ij")
    field = 0.5 + 0.3 * np.sin(4 * x + rng.uniform(0, 3)) * np.cos(3 * y) + 0.1 * z
    return np.clip(field, 0.0, 1.0)


class TestPixelMetrics(unittest.TestCase):

    def test_identity(self):
        img = np.random.default_rng(0).uniform(size=(8, 8))
        result = pixel_metrics(img, img)
        self.assertEqual(result.mae, 0.0)
        self.assertEqual(result.mse, 0.0)
        self.assertTrue(math.isinf(result.psnr))
        self.assertTrue(result.psnr_is_infinite)

    def test_constant_error(self):
        target = np.zeros((5, 5))
        result = pixel_metrics(target + 0.1, target, peak=1.0)
        self.assertAlmostEqual(result.mae, 0.1, places=12)
        self.assertAlmostEqual(result.mse, 0.01, places=12)
        self.assertAlmostEqual(result.psnr, 20.0, places=9)

    def test_two_pixel_example(self):
        result = pixel_metrics(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
        self.assertEqual(result.mae, 0.5)
        self.assertEqual(result.mse, 0.5)

    def test_accepts_slices_and_volumes(self):
        a = make_volume(np.zeros((3, 3, 2)))
        b = make_volume(np.ones((3, 3, 2)))
        self.assertEqual(pixel_metrics(a, b).mae, 1.0)
        self.assertEqual(pixel_metrics(Slice(np.zeros((3, 3)), 0), Slice(np.ones((3, 3)), 0)).mse, 1.0)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            pixel_metrics(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_invalid_peak(self):
        with self.assertRaises(ValueError):
            pixel_metrics(np.zeros(2), np.zeros(2), peak=0.0)

    def test_mae_squared_bounded_by_mse(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a, b = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
            result = pixel_metrics(a, b)
            self.assertLessEqual(result.mae ** 2, result.mse * (1 + 1e-12))

    def test_psnr_strictly_decreasing_in_mse(self):
        values = [psnr_from_mse(m, 1.0) for m in (1e-4, 1e-3, 1e-2, 1e-1)]
        self.assertEqual(values, sorted(values, reverse=True))
        self.assertEqual(len(set(values)), 4)


class TestSsim(unittest.TestCase):

    def test_identity_is_exactly_one(self):
        img = np.random.default_rng(1).uniform(size=(16, 16))
        self.assertEqual(ssim(img, img), 1.0)

    def test_constant_images_closed_form(self):
        params = SsimParams()
        value = ssim(np.zeros((11, 11)), np.ones((11, 11)), params)
        self.assertAlmostEqual(value, params.c1 / (1 + params.c1), delta=1e-9)
        self.assertAlmostEqual(value, 9.999e-5, delta=1e-8)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(200):
            x, y = rng.uniform(size=(16, 16)), rng.uniform(size=(16, 16))
            worst = max(worst, abs(ssim(x, y) - brute_force_ssim(x, y)))
        self.assertLessEqual(worst, 1e-6)

    def test_bounded(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            x, y = rng.normal(size=(12, 12)), rng.normal(size=(12, 12))
            self.assertLessEqual(abs(ssim(x, y)), 1.0)

    def test_window_weights_sum_to_one(self):
        self.assertAlmostEqual(SsimParams().gaussian_window().sum(), 1.0, places=12)

    def test_map_shape(self):
        self.assertEqual(ssim_map(np.ones((20, 15)), np.ones((20, 15))).shape, (10, 5))

    def test_image_smaller_than_window(self):
        with self.assertRaises(DegenerateInputError):
            ssim(np.ones((10, 20)), np.ones((10, 20)))

    def test_even_window_rejected(self):
        with self.assertRaises(ValueError):
            SsimParams(window=10)


class TestSimos(unittest.TestCase):

    def test_hand_value(self):
        gt = np.array([0.0, 1.0, 0.0]).reshape(1, 1, 3)
        syn = np.zeros((1, 1, 3))
        self.assertEqual(simos(gt, syn), 1.0)

    def test_zero_on_identity(self):
        vol = np.random.default_rng(0).normal(size=(4, 4, 6))
        self.assertEqual(simos(vol, vol), 0.0)

    def test_consecutive_slice_profile(self):
        vol = np.stack([np.full((2, 2), v) for v in (0.0, 1.0, 3.0)], axis=2)
        np.testing.assert_array_equal(consecutive_slice_mse(vol), [1.0, 4.0])

    def test_property_suite(self):
        rng = np.random.default_rng(77)
        for _ in range(1000):
            nz = int(rng.integers(2, 6))
            gt, syn = rng.normal(size=(3, 3, nz)), rng.normal(size=(3, 3, nz))
            value = simos(gt, syn)
            self.assertGreaterEqual(value, 0.0)
            self.assertEqual(value, simos(syn, gt))
            self.assertAlmostEqual(simos(gt, syn + rng.uniform(-10, 10)), value, delta=1e-9)
            self.assertEqual(simos(gt, gt), 0.0)

    def test_single_slice_is_degenerate(self):
        with self.assertRaises(DegenerateInputError):
            simos(np.zeros((2, 2, 1)), np.zeros((2, 2, 1)))

    def test_dims_mismatch(self):
        with self.assertRaises(DimensionError):
            simos(np.zeros((2, 2, 3)), np.zeros((2, 2, 4)))


class TestIou(unittest.TestCase):

    def test_examples(self):
        a = np.array([1, 1, 0, 0], dtype=bool)
        self.assertEqual(iou(a, a), 1.0)
        self.assertEqual(iou(a, ~a), 0.0)
        self.assertAlmostEqual(iou(a, np.array([0, 1, 1, 0], dtype=bool)), 1 / 3)

    def test_both_empty(self):
        self.assertEqual(iou(np.zeros(5, dtype=bool), np.zeros(5, dtype=bool)), 1.0)

    def test_one_empty(self):
        self.assertEqual(iou(np.zeros(5, dtype=bool), np.ones(5, dtype=bool)), 0.0)

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            a, b = rng.random(20) > 0.5, rng.random(20) > 0.5
            self.assertEqual(iou(a, b), iou(b, a))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            iou(np.zeros(3), np.zeros(4))


def _degradation_trial(seed):
    rng = np.random.default_rng(seed)
    target = smooth_target(rng)
    target_slices = extract_transverse_slices(make_volume(target))
    embedder = BlockMeanEmbedder(8)
    reference = embed_slices(target_slices, embedder)
    rows = []
    for sigma in (0.01, 0.05, 0.10):
        pred = target + rng.normal(0, sigma, target.shape)
        pred_slices = extract_transverse_slices(make_volume(pred))
        pm = pixel_metrics(pred, target)
        mean_ssim = np.mean([ssim(p, t) for p, t in zip(pred_slices, target_slices)])
        rows.append((pm.mae, pm.mse, pm.psnr, mean_ssim, fid(reference, embed_slices(pred_slices, embedder))))
    return rows


def _increasing(values):
    return all(a < b for a, b in zip(values, values[1:]))


def test_monotone_degradation():
    pixel_ok = fid_ok = 0
    for seed in range(20):
        mae, mse, psnr, mean_ssim, fid_values = zip(*_degradation_trial(seed))
        if _increasing(mae) and _increasing(mse) and _increasing(psnr[::-1]) and _increasing(mean_ssim[::-1]):
            pixel_ok += 1
        if _increasing(fid_values):
            fid_ok += 1
    assert pixel_ok >= 19
    assert fid_ok >= 18


@pytest.mark.parametrize("shape", [(11, 11), (16, 24)])
def test_ssim_of_noisy_copy_below_one(shape):
    rng = np.random.default_rng(9)
    x = rng.uniform(size=shape)
    assert ssim(x + rng.normal(0, 0.1, shape), x) < 1.0
