"""
NIfTI-1 single-file reader and writer.

Reads `.nii` and gzip-compressed `.nii.gz` (detected by the 0x1F 0x8B prefix, not
by file name), little- and big-endian headers, datatypes uint8/int16/float32/
float64, and honours scl_slope/scl_inter. Always writes uncompressed,
little-endian float32 with identity scaling.

Header layout follows the NIfTI-1 standard; offsets are noted per field.
"""

import gzip
import logging
import os
import tempfile
import zlib
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import DimensionError, NiftiFormatError, TruncatedPayloadError, UnsupportedDatatypeError
from .volume import Slice, ValueKind, Volume, VolumeGeometry

HEADER_SIZE = 348
SINGLE_FILE_MAGIC = b"n+1\x00"
GZIP_PREFIX = b"\x1f\x8b"
VOX_OFFSET = 352

header_dtd = [
    ('sizeof_hdr', 'i4'),      # 0; must be 348
    ('data_type', 'S10'),      # 4; unused
    ('db_name', 'S18'),        # 14; unused
    ('extents', 'i4'),         # 32; unused
    ('session_error', 'i2'),   # 36; unused
    ('regular', 'S1'),         # 38; unused
    ('dim_info', 'u1'),        # 39
    ('dim', 'i2', (8,)),       # 40; data array dimensions
    ('intent_p1', 'f4'),       # 56
    ('intent_p2', 'f4'),       # 60
    ('intent_p3', 'f4'),       # 64
    ('intent_code', 'i2'),     # 68
    ('datatype', 'i2'),        # 70
    ('bitpix', 'i2'),          # 72
    ('slice_start', 'i2'),     # 74
    ('pixdim', 'f4', (8,)),    # 76; qfac, then grid spacings
    ('vox_offset', 'f4'),      # 108; offset to voxel data
    ('scl_slope', 'f4'),       # 112
    ('scl_inter', 'f4'),       # 116
    ('slice_end', 'i2'),       # 120
    ('slice_code', 'u1'),      # 122
    ('xyzt_units', 'u1'),      # 123
    ('cal_max', 'f4'),         # 124
    ('cal_min', 'f4'),         # 128
    ('slice_duration', 'f4'),  # 132
    ('toffset', 'f4'),         # 136
    ('glmax', 'i4'),           # 140
    ('glmin', 'i4'),           # 144
    ('descrip', 'S80'),        # 148
    ('aux_file', 'S24'),       # 228
    ('qform_code', 'i2'),      # 252
    ('sform_code', 'i2'),      # 254
    ('quatern_b', 'f4'),       # 256
    ('quatern_c', 'f4'),       # 260
    ('quatern_d', 'f4'),       # 264
    ('qoffset_x', 'f4'),       # 268
    ('qoffset_y', 'f4'),       # 272
    ('qoffset_z', 'f4'),       # 276
    ('srow_x', 'f4', (4,)),    # 280
    ('srow_y', 'f4', (4,)),    # 296
    ('srow_z', 'f4', (4,)),    # 312
    ('intent_name', 'S16'),    # 328
    ('magic', 'S4'),           # 344; 'n+1\0' for single-file NIfTI-1
]

header_dtype = np.dtype(header_dtd)

# datatype code -> numpy scalar type
SUPPORTED_DATATYPES: Dict[int, type] = {
    2: np.uint8,
    4: np.int16,
    16: np.float32,
    64: np.float64,
}

PathLike = Union[str, Path]


def _decompress(raw: bytes, source: str) -> bytes:
    if raw[:2] != GZIP_PREFIX:
        return raw
    try:
        return gzip.decompress(raw)
    except (OSError, EOFError, zlib.error) as e:
        raise TruncatedPayloadError(f"{source}: corrupt or truncated gzip stream: {e}") from e


def _parse_header(data: bytes, source: str) -> np.ndarray:
    if len(data) < HEADER_SIZE:
        raise TruncatedPayloadError(
            f"{source}: header needs {HEADER_SIZE} bytes, only {len(data)} available"
        )
    if data[344:348] != SINGLE_FILE_MAGIC:
        raise NiftiFormatError(f"{source}: magic {data[344:348]!r} is not a single-file NIfTI-1 header")

    for endian in ("<", ">"):
        hdr = np.frombuffer(data[:HEADER_SIZE], dtype=header_dtype.newbyteorder(endian))[0]
        if int(hdr["sizeof_hdr"]) == HEADER_SIZE and 1 <= int(hdr["dim"][0]) <= 7:
            return hdr
    raise NiftiFormatError(f"{source}: cannot determine header byte order (sizeof_hdr/dim[0] invalid)")


def _quaternion_affine(hdr: np.ndarray, spacing: Tuple[float, float, float], qfac: float) -> np.ndarray:
    b, c, d = (float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"]))
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rotation = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])
    affine = np.eye(4)
    affine[:3, :3] = rotation * np.array([spacing[0], spacing[1], qfac * spacing[2]])
    affine[:3, 3] = [float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"])]
    return affine


def _geometry_from_header(hdr: np.ndarray, dims: Tuple[int, int, int], source: str) -> VolumeGeometry:
    pixdim = [float(v) for v in hdr["pixdim"]]
    spacing = (pixdim[1], pixdim[2], pixdim[3])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise NiftiFormatError(f"{source}: voxel spacing must be positive, got {spacing}")
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    qform_code, sform_code = int(hdr["qform_code"]), int(hdr["sform_code"])

    if sform_code > 0:
        affine = np.eye(4)
        affine[0], affine[1], affine[2] = hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]
    elif qform_code > 0:
        affine = _quaternion_affine(hdr, spacing, qfac)
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    return VolumeGeometry(
        dims=dims,
        spacing=spacing,
        affine=tuple(affine.ravel()),
        qform_code=qform_code,
        sform_code=sform_code,
        quatern=(float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])),
        qoffset=(float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"])),
        qfac=qfac,
    )


def _dims_from_header(hdr: np.ndarray, source: str) -> Tuple[int, int, int]:
    ndim = int(hdr["dim"][0])
    shape = [int(v) for v in hdr["dim"][1:ndim + 1]]
    if any(v <= 0 for v in shape):
        raise NiftiFormatError(f"{source}: non-positive dimension in {shape}")
    if len(shape) > 3 and any(v != 1 for v in shape[3:]):
        raise NiftiFormatError(f"{source}: only 3D volumes are supported, got dims {shape}")
    return tuple((shape + [1, 1, 1])[:3])


def decode_nifti(raw: bytes, source: str = "<bytes>", value_kind: ValueKind = ValueKind.RAW) -> Volume:
    """Decode a NIfTI-1 byte stream (optionally gzipped) into a Volume."""
    data = _decompress(raw, source)
    hdr = _parse_header(data, source)
    endian = hdr.dtype["sizeof_hdr"].byteorder

    dims = _dims_from_header(hdr, source)

    code = int(hdr["datatype"])
    if code not in SUPPORTED_DATATYPES:
        raise UnsupportedDatatypeError(f"{source}: unsupported NIfTI datatype code {code}")
    stored = np.dtype(SUPPORTED_DATATYPES[code]).newbyteorder(endian if endian in "<>" else "=")

    raw_offset = float(hdr["vox_offset"])
    if not np.isfinite(raw_offset) or raw_offset != int(raw_offset):
        raise NiftiFormatError(f"{source}: vox_offset {raw_offset} is not a whole byte count")
    offset = int(raw_offset)
    if offset < HEADER_SIZE:
        raise NiftiFormatError(f"{source}: vox_offset {offset} points inside the header")
    count = dims[0] * dims[1] * dims[2]
    needed = offset + count * stored.itemsize
    if len(data) < needed:
        raise TruncatedPayloadError(f"{source}: payload needs {needed} bytes, file has {len(data)}")

    voxels = np.frombuffer(data, dtype=stored, count=count, offset=offset)
    voxels = voxels.astype(stored.newbyteorder("="), copy=True).reshape(dims, order="F")

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if np.isfinite(slope) and slope != 0 and not (slope == 1 and inter == 0):
        voxels = voxels.astype(np.float64) * slope + inter
    elif not np.issubdtype(voxels.dtype, np.floating):
        voxels = voxels.astype(np.float64)

    geometry = _geometry_from_header(hdr, dims, source)
    return Volume(voxels, geometry, value_kind)


def read_nifti(path: PathLike, value_kind: ValueKind = ValueKind.RAW) -> Volume:
    """
    Read a NIfTI-1 file into a Volume.

    Args:
        path: `.nii` or `.nii.gz` file
        value_kind: tag for the voxel semantics the caller expects (e.g. HU for CT)

    Raises:
        NiftiFormatError, UnsupportedDatatypeError, TruncatedPayloadError, OSError
    """
    path = Path(path)
    raw = path.read_bytes()
    volume = decode_nifti(raw, str(path), value_kind)
    logging.debug(f"Read {path} dims={volume.dims} spacing={volume.spacing}")
    return volume


def encode_nifti(volume: Volume) -> bytes:
    """Encode a volume as uncompressed little-endian float32 NIfTI-1 bytes."""
    geometry = volume.geometry
    affine = geometry.affine_matrix
    hdr = np.zeros((), dtype=header_dtype.newbyteorder("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["dim"] = [3, *geometry.dims, 1, 1, 1, 1]
    hdr["datatype"] = 16
    hdr["bitpix"] = 32
    hdr["pixdim"] = [geometry.qfac, *geometry.spacing, 0, 0, 0, 0]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["descrip"] = b"sct-evaluator"
    hdr["qform_code"] = geometry.qform_code
    hdr["sform_code"] = geometry.sform_code
    hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"] = geometry.quatern
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = geometry.qoffset
    hdr["srow_x"], hdr["srow_y"], hdr["srow_z"] = affine[0], affine[1], affine[2]
    hdr["magic"] = SINGLE_FILE_MAGIC

    payload = np.asarray(volume.voxels, dtype="<f4").tobytes(order="F")
    # 4 zero bytes: empty extension block between header and vox_offset
    return hdr.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload


def write_nifti(volume: Volume, path: PathLike) -> None:
    """
    Write a volume as a single-file NIfTI-1 (float32, scl_slope=1, scl_inter=0).

    The file is written to a temporary sibling and moved into place, so readers
    never observe a partially written file.
    """
    path = Path(path)
    if path.name.endswith(".gz"):
        logging.warning(f"{path}: output is written uncompressed despite the .gz suffix")
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_nifti(volume)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logging.debug(f"Wrote {path} dims={volume.dims}")


def read_nifti_dims(path: PathLike) -> Tuple[int, int, int]:
    """Volume dims from the header alone, without decoding the payload."""
    path = Path(path)
    with path.open("rb") as handle:
        compressed = handle.read(2) == GZIP_PREFIX
    opener = gzip.open if compressed else open
    try:
        with opener(path, "rb") as handle:
            data = handle.read(HEADER_SIZE)
    except (OSError, EOFError, zlib.error) as e:
        raise TruncatedPayloadError(f"{path}: cannot read header: {e}") from e
    return _dims_from_header(_parse_header(data, str(path)), str(path))


SLICE_INDEX_FILE = "slices.csv"


def write_slice_stack(slices: Sequence[Slice], directory: PathLike,
                      geometry: Optional[VolumeGeometry] = None) -> Path:
    """
    Write slices as nz=1 NIfTI files plus a `slices.csv` index (index,path).

    Paths in the index are relative to `directory`. When a template geometry is
    given, each slice file carries its spacing; otherwise the slice's in-plane
    spacing with unit slice thickness is used.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in slices:
        if geometry is not None:
            slice_geometry = VolumeGeometry(dims=(*s.shape, 1), spacing=geometry.spacing)
        else:
            slice_geometry = VolumeGeometry(dims=(*s.shape, 1), spacing=(*s.spacing, 1.0))
        name = f"slice_{s.index:04d}.nii"
        write_nifti(Volume(np.asarray(s.pixels)[:, :, np.newaxis], slice_geometry, s.value_kind),
                    directory / name)
        rows.append({'index': s.index, 'path': name})
    index_path = directory / SLICE_INDEX_FILE
    pd.DataFrame(rows, columns=['index', 'path']).to_csv(index_path, index=False, lineterminator="\n")
    logging.debug(f"Wrote {len(rows)} slices to {directory}")
    return index_path


def read_slice_stack(directory: PathLike, value_kind: ValueKind = ValueKind.RAW) -> List[Slice]:
    """
    Read a slice stack written by write_slice_stack, ordered by index.

    Raises:
        DimensionError: duplicate indices or a slice file that is not nz=1
    """
    directory = Path(directory)
    index = pd.read_csv(directory / SLICE_INDEX_FILE)
    if index['index'].duplicated().any():
        raise DimensionError(f"{directory}: duplicate slice indices in {SLICE_INDEX_FILE}")
    slices = []
    for row in index.sort_values('index').itertuples(index=False):
        volume = read_nifti(directory / row.path, value_kind)
        if volume.dims[2] != 1:
            raise DimensionError(f"{row.path}: slice file must have nz=1, got dims {volume.dims}")
        slices.append(Slice(volume.voxels[:, :, 0], int(row.index), volume.geometry.in_plane_spacing, value_kind))
    return slices
