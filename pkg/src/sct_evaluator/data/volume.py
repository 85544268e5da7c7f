"""
In-memory volume types and the transverse slice/stack operations.

Arrays are indexed (x, y, z); the transverse plane at index z is voxels[:, :, z].
Volumes and slices are read-only after construction.
"""

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DimensionError, ValueKindError


class ValueKind(str, enum.Enum):
    RAW = "raw"
    HU = "hu"
    NORMALIZED = "normalized"
    RAW_MRI = "raw-mri"


def _readonly(array: np.ndarray) -> np.ndarray:
    view = array.view()
    view.flags.writeable = False
    return view


def _f32(values) -> Tuple[float, ...]:
    # Geometry is stored at float32 precision so it survives a NIfTI round trip.
    return tuple(float(v) for v in np.asarray(values, dtype=np.float32).ravel())


@dataclass(frozen=True)
class VolumeGeometry:
    """
    Grid geometry of a volume: dims, voxel spacing (mm) and orientation.

    `affine` is the voxel-index -> mm mapping (4x4). The NIfTI qform/sform
    parameters are carried verbatim so a read/write cycle passes them through
    without any reorientation.
    """

    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    affine: Tuple[float, ...] = ()
    qform_code: int = 0
    sform_code: int = 1
    quatern: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    qoffset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    qfac: float = 1.0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise DimensionError(f"dims must be three positive integers, got {self.dims}")
        spacing = _f32(self.spacing)
        if len(spacing) != 3 or any(not s > 0 for s in spacing):
            raise DimensionError(f"spacing must be three positive values, got {self.spacing}")
        if len(self.affine) == 0:
            affine = _f32(np.diag([spacing[0], spacing[1], spacing[2], 1.0]))
        else:
            affine = _f32(self.affine)
            if len(affine) != 16:
                raise DimensionError("affine must have 16 entries")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "quatern", _f32(self.quatern))
        object.__setattr__(self, "qoffset", _f32(self.qoffset))
        object.__setattr__(self, "qfac", -1.0 if self.qfac < 0 else 1.0)

    @property
    def affine_matrix(self) -> np.ndarray:
        return np.asarray(self.affine, dtype=np.float64).reshape(4, 4)

    @property
    def in_plane_spacing(self) -> Tuple[float, float]:
        return self.spacing[0], self.spacing[1]

    def with_dims(self, dims: Tuple[int, int, int]) -> "VolumeGeometry":
        return VolumeGeometry(
            dims=dims, spacing=self.spacing, affine=self.affine,
            qform_code=self.qform_code, sform_code=self.sform_code,
            quatern=self.quatern, qoffset=self.qoffset, qfac=self.qfac,
        )


@dataclass(frozen=True, eq=False)
class Volume:
    voxels: np.ndarray
    geometry: VolumeGeometry
    value_kind: ValueKind = ValueKind.RAW

    def __post_init__(self):
        voxels = np.asarray(self.voxels)
        if voxels.ndim != 3:
            raise DimensionError(f"volume voxels must be 3D, got shape {voxels.shape}")
        if tuple(voxels.shape) != self.geometry.dims:
            raise DimensionError(
                f"voxel shape {voxels.shape} does not match geometry dims {self.geometry.dims}"
            )
        if self.value_kind == ValueKind.NORMALIZED and voxels.size:
            lo, hi = float(np.min(voxels)), float(np.max(voxels))
            if lo < 0.0 or hi > 1.0:
                raise ValueKindError(
                    f"normalized volume has values outside [0, 1]: [{lo}, {hi}]"
                )
        object.__setattr__(self, "voxels", _readonly(voxels))
        object.__setattr__(self, "value_kind", ValueKind(self.value_kind))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.geometry.dims

    @property
    def spacing(self) -> Tuple[float, float, float]:
        return self.geometry.spacing

    def replace_voxels(self, voxels: np.ndarray, value_kind: Optional[ValueKind] = None) -> "Volume":
        """New volume with the same geometry and new voxel values."""
        return Volume(voxels, self.geometry, value_kind or self.value_kind)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.value_kind == other.value_kind
            and np.array_equal(self.voxels, other.voxels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Slice:
    pixels: np.ndarray
    index: int
    spacing: Tuple[float, float] = (1.0, 1.0)
    value_kind: ValueKind = ValueKind.RAW

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2:
            raise DimensionError(f"slice pixels must be 2D, got shape {pixels.shape}")
        if self.index < 0:
            raise DimensionError(f"slice index must be non-negative, got {self.index}")
        object.__setattr__(self, "pixels", _readonly(pixels))

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.pixels.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Slice):
            return NotImplemented
        return (
            self.index == other.index
            and self.value_kind == other.value_kind
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


def make_volume(voxels: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0),
                value_kind: ValueKind = ValueKind.RAW) -> Volume:
    """Volume with an axis-aligned affine built from `spacing`."""
    voxels = np.asarray(voxels)
    return Volume(voxels, VolumeGeometry(dims=voxels.shape, spacing=tuple(spacing)), value_kind)


def extract_transverse_slices(volume: Volume) -> List[Slice]:
    """Split a volume into its nz transverse slices in ascending z order."""
    if volume.voxels.size == 0:
        raise DimensionError("cannot slice an empty volume")
    spacing = volume.geometry.in_plane_spacing
    return [
        Slice(volume.voxels[:, :, z], z, spacing, volume.value_kind)
        for z in range(volume.dims[2])
    ]


def stack_slices(slices: Sequence[Slice], geometry: VolumeGeometry,
                 value_kind: Optional[ValueKind] = None) -> Volume:
    """
    Restack transverse slices into a volume with the template geometry.

    Plane z of the result equals slices[z]. The value kind is taken from the
    slices unless given explicitly.
    """
    nx, ny, nz = geometry.dims
    if len(slices) != nz:
        raise DimensionError(f"expected {nz} slices for the template geometry, got {len(slices)}")
    for i, s in enumerate(slices):
        if s.shape != (nx, ny):
            raise DimensionError(f"slice {i} has shape {s.shape}, expected {(nx, ny)}")
    kind = value_kind or slices[0].value_kind
    voxels = np.stack([s.pixels for s in slices], axis=2)
    return Volume(voxels, geometry, kind)
