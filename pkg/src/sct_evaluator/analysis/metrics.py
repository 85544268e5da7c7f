"""
Image quality metrics for synthetic CT evaluation.

Pixel metrics (MAE, MSE, PSNR), Gaussian-windowed SSIM, the slice-continuity
metric SIMOS, and binary-mask IoU. All functions are pure.
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import signal

from ..data.volume import Slice, Volume
from ..errors import DegenerateInputError, DimensionError

ImageLike = Union[np.ndarray, Slice, Volume]

PSNR_INFINITE = float("inf")


def _as_array(image: ImageLike) -> np.ndarray:
    if isinstance(image, Volume):
        return np.asarray(image.voxels, dtype=np.float64)
    if isinstance(image, Slice):
        return np.asarray(image.pixels, dtype=np.float64)
    return np.asarray(image, dtype=np.float64)


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class PixelMetrics:
    mae: float
    mse: float
    psnr: float

    @property
    def psnr_is_infinite(self) -> bool:
        return math.isinf(self.psnr)


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"SSIM window must be a positive odd size, got {self.window}")
        if self.sigma <= 0 or self.k1 <= 0 or self.k2 <= 0 or self.dynamic_range <= 0:
            raise ValueError("SSIM sigma, k1, k2 and dynamic_range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def gaussian_window(self) -> np.ndarray:
        """Normalized 2D Gaussian window (weights sum to 1)."""
        radius = self.window // 2
        x = np.arange(-radius, radius + 1, dtype=np.float64)
        g = np.exp(-(x ** 2) / (2.0 * self.sigma ** 2))
        w = np.outer(g, g)
        return w / w.sum()


def psnr_from_mse(mse: float, peak: float) -> float:
    if mse == 0:
        return PSNR_INFINITE
    return 10.0 * math.log10(peak ** 2 / mse)


def pixel_metrics(pred: ImageLike, target: ImageLike, peak: float = 1.0) -> PixelMetrics:
    """
    MAE, MSE and PSNR between two same-shape images or volumes.

    PSNR is +inf when the images are identical.
    """
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    p, t = _as_array(pred), _as_array(target)
    _check_same_shape(p, t, "pixel_metrics")
    diff = p - t
    mae = float(np.mean(np.abs(diff)))
    mse = float(np.mean(diff * diff))
    return PixelMetrics(mae=mae, mse=mse, psnr=psnr_from_mse(mse, peak))


def ssim_map(pred: ImageLike, target: ImageLike, params: SsimParams = SsimParams()) -> np.ndarray:
    """
    Local SSIM over every fully contained window position.

    Local means, variances and covariance are Gaussian-weighted; no padding is
    applied, so the map has shape (nx - w + 1, ny - w + 1).
    """
    x, y = _as_array(pred), _as_array(target)
    _check_same_shape(x, y, "ssim")
    if x.ndim != 2:
        raise DimensionError(f"ssim expects 2D slices, got shape {x.shape}")
    if min(x.shape) < params.window:
        raise DegenerateInputError(
            f"image {x.shape} is smaller than the {params.window}x{params.window} SSIM window"
        )

    w = params.gaussian_window()

    def filt(img: np.ndarray) -> np.ndarray:
        return signal.correlate2d(img, w, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = filt(x * x) - mu_xx
    var_y = filt(y * y) - mu_yy
    cov_xy = filt(x * y) - mu_xy

    c1, c2 = params.c1, params.c2
    numerator = (2.0 * mu_xy + c1) * (2.0 * cov_xy + c2)
    denominator = (mu_xx + mu_yy + c1) * (var_x + var_y + c2)
    return numerator / denominator


def ssim(pred: ImageLike, target: ImageLike, params: SsimParams = SsimParams()) -> float:
    """Mean of the local SSIM map; 1.0 for identical slices."""
    return float(np.mean(ssim_map(pred, target, params)))


def consecutive_slice_mse(volume: ImageLike) -> np.ndarray:
    """MSE between transverse slices z and z+1 for z = 0 .. nz-2."""
    v = _as_array(volume)
    diff = v[:, :, 1:] - v[:, :, :-1]
    return np.mean(diff * diff, axis=(0, 1))


def simos(gt: ImageLike, syn: ImageLike) -> float:
    """
    Similarity Of Slices: mean absolute difference between the consecutive-slice
    MSE profiles of the ground-truth and synthetic volumes.

    The sum runs over the nz-1 consecutive slice pairs and divides by nz-1.
    """
    g, s = _as_array(gt), _as_array(syn)
    if g.ndim != 3:
        raise DimensionError(f"simos expects 3D volumes, got shape {g.shape}")
    _check_same_shape(g, s, "simos")
    if g.shape[2] < 2:
        raise DegenerateInputError(f"simos needs at least 2 slices, got {g.shape[2]}")
    profile_gap = np.abs(consecutive_slice_mse(g) - consecutive_slice_mse(s))
    return float(profile_gap.sum() / (g.shape[2] - 1))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; two empty masks score 1.0."""
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    _check_same_shape(a, b, "iou")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union
