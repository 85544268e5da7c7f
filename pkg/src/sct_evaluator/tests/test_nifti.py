import gzip
import unittest

import numpy as np
import pytest

from sct_evaluator.data.nifti import (
    HEADER_SIZE,
    decode_nifti,
    encode_nifti,
    header_dtype,
    read_nifti,
    read_nifti_dims,
    read_slice_stack,
    write_nifti,
    write_slice_stack,
)
from sct_evaluator.data.volume import ValueKind, Volume, VolumeGeometry, extract_transverse_slices, make_volume
from sct_evaluator.errors import DimensionError, NiftiFormatError, TruncatedPayloadError, UnsupportedDatatypeError


def _with_header(raw: bytes, **fields) -> bytes:
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype.newbyteorder("<")).copy()
    for name, value in fields.items():
        hdr[name] = value
    return hdr.tobytes() + raw[HEADER_SIZE:]


def test_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(50):
        dims = tuple(int(v) for v in rng.integers(1, 9, size=3))
        spacing = tuple(float(v) for v in rng.uniform(0.3, 4.0, size=3))
        volume = make_volume(rng.normal(0, 500, dims).astype(np.float32), spacing)
        path = tmp_path / f"v{i}.nii"
        write_nifti(volume, path)
        back = read_nifti(path)
        assert back.voxels.dtype == np.float32
        assert back.voxels.tobytes() == volume.voxels.tobytes()
        assert back.geometry == volume.geometry


def test_gzip_detected_by_content(tmp_path):
    volume = make_volume(np.arange(24, dtype=np.float32).reshape(2, 3, 4))
    path = tmp_path / "plain_name.nii"
    path.write_bytes(gzip.compress(encode_nifti(volume)))
    assert read_nifti(path) == volume


def test_big_endian_header_and_payload():
    volume = make_volume(np.arange(8, dtype=np.float32).reshape(2, 2, 2), (1.0, 2.0, 3.0))
    raw = encode_nifti(volume)
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype.newbyteorder("<"))
    big_header = hdr.astype(header_dtype.newbyteorder(">")).tobytes()
    payload = np.asarray(volume.voxels, dtype=">f4").tobytes(order="F")
    decoded = decode_nifti(big_header + raw[HEADER_SIZE:352] + payload)
    np.testing.assert_array_equal(decoded.voxels, volume.voxels)
    assert decoded.spacing == (1.0, 2.0, 3.0)


def test_int16_scaling_applied():
    base = encode_nifti(make_volume(np.zeros((2, 2, 1), dtype=np.float32)))
    raw = _with_header(base, datatype=4, bitpix=16, scl_slope=2.0, scl_inter=-1000.0)
    payload = np.array([0, 1, 2, 3], dtype="<i2").tobytes()
    volume = decode_nifti(raw[:352] + payload, value_kind=ValueKind.HU)
    np.testing.assert_array_equal(volume.voxels[:, :, 0], [[-1000.0, -996.0], [-998.0, -994.0]])
    assert volume.value_kind == ValueKind.HU


def test_zero_slope_means_no_scaling():
    base = encode_nifti(make_volume(np.zeros((2, 1, 1), dtype=np.float32)))
    raw = _with_header(base, datatype=2, bitpix=8, scl_slope=0.0, scl_inter=5.0)
    volume = decode_nifti(raw[:352] + bytes([7, 9]))
    np.testing.assert_array_equal(volume.voxels.ravel(), [7.0, 9.0])


def test_sform_preserved(tmp_path):
    affine = (0.0, -1.0, 0.0, 10.0, 1.0, 0.0, 0.0, -20.0, 0.0, 0.0, 2.0, 5.0, 0.0, 0.0, 0.0, 1.0)
    geometry = VolumeGeometry(dims=(3, 3, 2), spacing=(1.0, 1.0, 2.0), affine=affine, sform_code=2)
    volume = Volume(np.ones((3, 3, 2), dtype=np.float32), geometry)
    write_nifti(volume, tmp_path / "oriented.nii")
    back = read_nifti(tmp_path / "oriented.nii")
    assert back.geometry.affine == geometry.affine
    assert back.geometry.sform_code == 2


def test_read_nifti_dims(tmp_path):
    write_nifti(make_volume(np.zeros((5, 6, 7), dtype=np.float32)), tmp_path / "v.nii")
    assert read_nifti_dims(tmp_path / "v.nii") == (5, 6, 7)


def test_slice_stack_round_trip(tmp_path, rng):
    volume = make_volume(rng.normal(size=(4, 3, 5)).astype(np.float32), (0.5, 0.5, 3.0))
    index = write_slice_stack(extract_transverse_slices(volume), tmp_path / "stack", volume.geometry)
    assert index.read_text().splitlines()[0] == "index,path"
    slices = read_slice_stack(tmp_path / "stack")
    assert [s.index for s in slices] == [0, 1, 2, 3, 4]
    for z, s in enumerate(slices):
        np.testing.assert_array_equal(s.pixels, volume.voxels[:, :, z])


def test_slice_stack_rejects_duplicate_indices(tmp_path):
    volume = make_volume(np.zeros((2, 2, 2), dtype=np.float32))
    write_slice_stack(extract_transverse_slices(volume), tmp_path / "stack")
    (tmp_path / "stack" / "slices.csv").write_text("index,path\n0,slice_0000.nii\n0,slice_0001.nii\n")
    with pytest.raises(DimensionError):
        read_slice_stack(tmp_path / "stack")


class TestMalformedInput(unittest.TestCase):

    def setUp(self):
        self.raw = encode_nifti(make_volume(np.ones((4, 4, 4), dtype=np.float32)))

    def test_bad_magic(self):
        raw = self.raw[:344] + b"ni1\x00" + self.raw[348:]
        with self.assertRaises(NiftiFormatError):
            decode_nifti(raw)

    def test_truncated_header(self):
        with self.assertRaises(TruncatedPayloadError):
            decode_nifti(self.raw[:200])

    def test_truncated_payload(self):
        with self.assertRaises(TruncatedPayloadError):
            decode_nifti(self.raw[:-10])

    def test_truncated_payload_is_an_io_error(self):
        with self.assertRaises(IOError):
            decode_nifti(self.raw[:-10])

    def test_corrupt_gzip(self):
        with self.assertRaises(TruncatedPayloadError):
            decode_nifti(gzip.compress(self.raw)[:60])

    def test_unsupported_datatype(self):
        with self.assertRaises(UnsupportedDatatypeError):
            decode_nifti(_with_header(self.raw, datatype=32))

    def test_unknown_byte_order(self):
        with self.assertRaises(NiftiFormatError):
            decode_nifti(_with_header(self.raw, sizeof_hdr=100))

    def test_non_positive_spacing(self):
        pixdim = np.array([1, 1, 0, 1, 0, 0, 0, 0], dtype=np.float32)
        with self.assertRaises(NiftiFormatError):
            decode_nifti(_with_header(self.raw, pixdim=pixdim))

    def test_non_finite_vox_offset(self):
        for value in (np.nan, np.inf, -np.inf):
            with self.subTest(vox_offset=value):
                with self.assertRaises(NiftiFormatError):
                    decode_nifti(_with_header(self.raw, vox_offset=value))

    def test_fractional_vox_offset(self):
        with self.assertRaises(NiftiFormatError):
            decode_nifti(_with_header(self.raw, vox_offset=352.5))

    def test_infinite_spacing(self):
        pixdim = np.array([1, 1, np.inf, 1, 0, 0, 0, 0], dtype=np.float32)
        with self.assertRaises(NiftiFormatError):
            decode_nifti(_with_header(self.raw, pixdim=pixdim))

    def test_empty_file(self):
        with self.assertRaises(TruncatedPayloadError):
            decode_nifti(b"")


if __name__ == '__main__':
    unittest.main()
