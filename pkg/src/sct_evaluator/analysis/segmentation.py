"""
Evaluation of externally produced segmentation masks.

Masks arrive as NIfTI-1 integer volumes with a sidecar label map of
"id<TAB>name" lines. Labels are matched across ground truth and synthetic
masks by name, since separate segmentor runs may number them differently.
2D (per-slice) masks go through the same code path as nz=1 volumes.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from ..data.nifti import read_nifti
from ..data.volume import VolumeGeometry
from ..errors import DimensionError, MaskLabelError
from ..utils.prng import XorShift64Star, derive_seed
from .metrics import iou

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class LabelMaskVolume:
    labels: np.ndarray
    label_names: Dict[int, str]
    geometry: VolumeGeometry

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise DimensionError(f"label mask must be 3D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise MaskLabelError("label mask must hold integers")
        if labels.size and labels.min() < 0:
            raise MaskLabelError("label ids must be non-negative")
        present = {int(v) for v in np.unique(labels) if v != 0}
        missing = present - set(self.label_names)
        if missing:
            raise MaskLabelError(f"labels {sorted(missing)} have no name in the label map")
        names = [self.label_names[i] for i in present]
        if len(set(names)) != len(names):
            raise MaskLabelError("label names must be unique")
        object.__setattr__(self, "labels", labels)

    def present_names(self) -> Dict[str, int]:
        """name -> id for every non-background label with at least one voxel."""
        return {self.label_names[int(v)]: int(v) for v in np.unique(self.labels) if v != 0}

    def slice_mask(self, z: int) -> "LabelMaskVolume":
        """Transverse slice z as an nz=1 mask volume."""
        nx, ny, _ = self.geometry.dims
        return LabelMaskVolume(self.labels[:, :, z:z + 1], self.label_names,
                               self.geometry.with_dims((nx, ny, 1)))


@dataclass
class LabelIouResult:
    mean: float
    per_label: Dict[str, float] = field(default_factory=dict)


def read_label_map(path: PathLike) -> Dict[int, str]:
    """Parse "id<TAB>name" lines; blank lines and '#' comments are ignored."""
    names = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2 or not parts[0].strip().isdigit():
            raise MaskLabelError(f"{path}:{lineno}: expected 'id<TAB>name', got {line!r}")
        names[int(parts[0])] = parts[1].strip()
    return names


def write_label_map(label_names: Dict[int, str], path: PathLike) -> None:
    lines = [f"{label_id}\t{name}" for label_id, name in sorted(label_names.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_label_mask(mask_path: PathLike, label_map_path: PathLike) -> LabelMaskVolume:
    volume = read_nifti(mask_path)
    values = np.asarray(volume.voxels)
    rounded = np.rint(values)
    if not np.array_equal(rounded, values):
        raise MaskLabelError(f"{mask_path}: mask voxels are not integers")
    return LabelMaskVolume(rounded.astype(np.int32), read_label_map(label_map_path), volume.geometry)


def select_eval_subset(test_patients: Sequence[str], fraction: float = 0.5, seed: int = 0) -> List[str]:
    """
    Deterministic choice of ceil(fraction * n) patients, returned sorted.

    The input order does not matter: ids are sorted before the seeded shuffle.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    patients = sorted(set(test_patients))
    if not patients:
        raise ValueError("test patient list is empty")
    count = min(len(patients), math.ceil(fraction * len(patients) - 1e-9))
    rng = XorShift64Star(derive_seed(seed, "segmentation-subset"))
    return sorted(rng.shuffled(patients)[:count])


def mean_label_iou(gt: LabelMaskVolume, syn: LabelMaskVolume) -> LabelIouResult:
    """
    IoU per label name present in either mask (background excluded), and their mean.

    Two masks without any labels agree perfectly and score 1.0.
    """
    if gt.labels.shape != syn.labels.shape:
        raise DimensionError(f"mask dims differ: {gt.labels.shape} vs {syn.labels.shape}")
    gt_names, syn_names = gt.present_names(), syn.present_names()
    names = sorted(set(gt_names) | set(syn_names))
    if not names:
        return LabelIouResult(mean=1.0)

    empty = np.zeros(gt.labels.shape, dtype=bool)
    per_label = {}
    for name in names:
        a = gt.labels == gt_names[name] if name in gt_names else empty
        b = syn.labels == syn_names[name] if name in syn_names else empty
        per_label[name] = iou(a, b)
    return LabelIouResult(mean=float(np.mean([per_label[n] for n in names])), per_label=per_label)


def slice_label_iou(gt: LabelMaskVolume, syn: LabelMaskVolume) -> LabelIouResult:
    """
    2D evaluation: mean_label_iou on every transverse slice holding a label in
    either mask, averaged over those slices. Per-label values are averaged over
    the slices where the label occurs.
    """
    if gt.labels.shape != syn.labels.shape:
        raise DimensionError(f"mask dims differ: {gt.labels.shape} vs {syn.labels.shape}")
    slice_means = []
    label_values: Dict[str, List[float]] = {}
    for z in range(gt.labels.shape[2]):
        if not (gt.labels[:, :, z].any() or syn.labels[:, :, z].any()):
            continue
        result = mean_label_iou(gt.slice_mask(z), syn.slice_mask(z))
        slice_means.append(result.mean)
        for name, value in result.per_label.items():
            label_values.setdefault(name, []).append(value)
    if not slice_means:
        logging.debug("No labelled slices in either 2D mask")
        return LabelIouResult(mean=1.0)
    return LabelIouResult(
        mean=float(np.mean(slice_means)),
        per_label={name: float(np.mean(v)) for name, v in sorted(label_values.items())},
    )
