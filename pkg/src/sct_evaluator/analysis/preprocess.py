"""
CT and MRI intensity preprocessing and multi-channel slice construction.

CT:  cap at ct_cap HU, min-max with the population floor ct_floor, clamp to [0, 1].
MRI: cap at the per-image nearest-rank percentile, then per-image min-max to [0, 1].
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..data.volume import Slice, ValueKind, Volume
from ..errors import DegenerateInputError, PairingError, ValueKindError


@dataclass(frozen=True)
class NormalizationParams:
    ct_floor: float = -1000.0
    ct_cap: float = 2000.0
    mri_percentile: float = 0.98

    def __post_init__(self):
        if not self.ct_floor < self.ct_cap:
            raise ValueError(f"ct_floor ({self.ct_floor}) must be below ct_cap ({self.ct_cap})")
        if not 0.0 < self.mri_percentile < 1.0:
            raise ValueError(f"mri_percentile must be in (0, 1), got {self.mri_percentile}")

    @property
    def ct_range(self) -> float:
        return self.ct_cap - self.ct_floor


@dataclass(frozen=True, eq=False)
class MultiChannelSlice:
    channels: Tuple[Slice, ...]
    center_index: int
    target: Slice

    @property
    def k(self) -> int:
        return len(self.channels)

    def stacked(self) -> np.ndarray:
        """Channels as a (k, nx, ny) array."""
        return np.stack([c.pixels for c in self.channels], axis=0)


def preprocess_ct(volume: Volume, params: NormalizationParams = NormalizationParams()) -> Volume:
    """Map a CT volume in HU to [0, 1]: cap at ct_cap, subtract ct_floor, divide by the range."""
    if volume.value_kind not in (ValueKind.HU, ValueKind.RAW):
        raise ValueKindError(f"preprocess_ct expects HU data, got {volume.value_kind.value}")
    hu = np.minimum(volume.voxels.astype(np.float64), params.ct_cap)
    normalized = np.clip((hu - params.ct_floor) / params.ct_range, 0.0, 1.0)
    return volume.replace_voxels(normalized, ValueKind.NORMALIZED)


def denormalize_ct(volume: Volume, params: NormalizationParams = NormalizationParams()) -> Volume:
    """Inverse affine map of preprocess_ct: u -> u * (ct_cap - ct_floor) + ct_floor."""
    if volume.value_kind != ValueKind.NORMALIZED:
        raise ValueKindError(f"denormalize_ct expects normalized data, got {volume.value_kind.value}")
    hu = volume.voxels.astype(np.float64) * params.ct_range + params.ct_floor
    return volume.replace_voxels(hu, ValueKind.HU)


def nearest_rank_percentile(values: np.ndarray, fraction: float) -> float:
    """The ceil(fraction * n)-th smallest value (1-based) of `values`."""
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = flat.size
    if n == 0:
        raise DegenerateInputError("percentile of an empty array")
    # tolerance keeps exact products such as 0.98 * 100 on the intended rank
    rank = math.ceil(fraction * n - 1e-9)
    rank = min(max(rank, 1), n)
    return float(flat[rank - 1])


def preprocess_mri(volume: Volume, params: NormalizationParams = NormalizationParams()) -> Volume:
    """
    Cap intensities above this image's percentile and min-max normalize to [0, 1].

    Constant images map to all zeros.
    """
    if volume.value_kind not in (ValueKind.RAW_MRI, ValueKind.RAW):
        raise ValueKindError(f"preprocess_mri expects raw MRI data, got {volume.value_kind.value}")
    voxels = volume.voxels.astype(np.float64)
    if voxels.size == 0:
        raise DegenerateInputError("preprocess_mri needs at least one voxel")

    cap = nearest_rank_percentile(voxels, params.mri_percentile)
    capped = np.minimum(voxels, cap)
    lo, hi = float(capped.min()), float(capped.max())
    if hi == lo:
        logging.debug("Constant MRI volume, normalizing to zeros")
        normalized = np.zeros_like(capped)
    else:
        normalized = np.clip((capped - lo) / (hi - lo), 0.0, 1.0)
    return volume.replace_voxels(normalized, ValueKind.NORMALIZED)


def build_multichannel(mri_slices: Sequence[Slice], ct_slices: Sequence[Slice], k: int = 3) -> List[MultiChannelSlice]:
    """
    Pair each MRI slice and its k-1 neighbours with the CT slice at the centre.

    Neighbours beyond the volume edge replicate the boundary slice, so the output
    has one item per input slice for every k.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"k must be a positive odd integer, got {k}")
    n = len(mri_slices)
    if n != len(ct_slices):
        raise PairingError(f"MRI has {n} slices but CT has {len(ct_slices)}")
    if n == 0:
        raise PairingError("cannot build multi-channel items from zero slices")

    half = (k - 1) // 2
    items = []
    for i in range(n):
        channels = tuple(mri_slices[min(max(i + o, 0), n - 1)] for o in range(-half, half + 1))
        items.append(MultiChannelSlice(channels=channels, center_index=i, target=ct_slices[i]))
    return items


def intensity_histogram(volume: Volume, bins: int = 100,
                        value_range: Optional[Tuple[float, float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Frequency distribution of voxel intensities.

    Returns (counts, edges) as numpy.histogram does; the range defaults to the
    volume's min and max.
    """
    voxels = np.asarray(volume.voxels, dtype=np.float64).ravel()
    if value_range is None:
        value_range = (float(voxels.min()), float(voxels.max())) if voxels.size else (0.0, 1.0)
    return np.histogram(voxels, bins=bins, range=value_range)
