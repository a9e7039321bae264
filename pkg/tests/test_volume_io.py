import struct

import numpy as np
import pytest

from adens.errors import CorruptHeader, MissingFile, ShapeMismatch, UnsupportedFormat
from adens.volume_io import (
    HEADER_SIZE,
    read_volume_array,
    write_analyze,
    write_nifti,
)


@pytest.fixture
def voxels() -> np.ndarray:
    rng = np.random.default_rng(42)
    return rng.normal(size=(4, 5, 6)).astype(np.float32)


def test_nifti_round_trip_is_exact(tmp_path, voxels):
    path = write_nifti(tmp_path / "vol.nii", voxels)
    out = read_volume_array(path)
    assert out.shape == (4, 5, 6)
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out, voxels)


def test_analyze_round_trip_is_exact(tmp_path, voxels):
    write_analyze(tmp_path / "vol.hdr", voxels)
    np.testing.assert_array_equal(read_volume_array(tmp_path / "vol.hdr"), voxels)
    # reading via the .img side of the pair works too
    np.testing.assert_array_equal(read_volume_array(tmp_path / "vol.img"), voxels)


def test_both_formats_agree_on_the_same_array(tmp_path, voxels):
    nii = read_volume_array(write_nifti(tmp_path / "a.nii", voxels))
    ana = read_volume_array(write_analyze(tmp_path / "a.hdr", voxels))
    np.testing.assert_array_equal(nii, ana)


def test_truncated_payload_is_shape_mismatch(tmp_path, voxels):
    path = write_nifti(tmp_path / "vol.nii", voxels)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ShapeMismatch):
        read_volume_array(path)


def test_padded_payload_is_shape_mismatch(tmp_path, voxels):
    path = write_analyze(tmp_path / "vol.hdr", voxels)
    img = path.with_suffix(".img")
    img.write_bytes(img.read_bytes() + b"\x00" * 4)
    with pytest.raises(ShapeMismatch):
        read_volume_array(path)


def test_missing_file(tmp_path):
    with pytest.raises(MissingFile):
        read_volume_array(tmp_path / "nope.nii")


def test_missing_img_side_of_pair(tmp_path, voxels):
    path = write_analyze(tmp_path / "vol.hdr", voxels)
    path.with_suffix(".img").unlink()
    with pytest.raises(MissingFile):
        read_volume_array(path)


def test_unknown_suffix_rejected(tmp_path):
    path = tmp_path / "vol.dcm"
    path.write_bytes(b"\x00" * 400)
    with pytest.raises(UnsupportedFormat):
        read_volume_array(path)


def test_bad_sizeof_hdr_is_corrupt(tmp_path, voxels):
    path = write_nifti(tmp_path / "vol.nii", voxels)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<i", raw, 0, 999)
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptHeader):
        read_volume_array(path)


def test_short_header_is_corrupt(tmp_path):
    path = tmp_path / "vol.nii"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(CorruptHeader):
        read_volume_array(path)


def test_wrong_magic_in_single_file_rejected(tmp_path, voxels):
    path = write_nifti(tmp_path / "vol.nii", voxels)
    raw = bytearray(path.read_bytes())
    raw[344:348] = b"\x00\x00\x00\x00"
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedFormat):
        read_volume_array(path)


def test_unsupported_datatype_code(tmp_path, voxels):
    path = write_nifti(tmp_path / "vol.nii", voxels)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<h", raw, 70, 128)  # RGB24, not in the supported map
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedFormat):
        read_volume_array(path)


def test_bitpix_mismatch_is_corrupt(tmp_path, voxels):
    path = write_nifti(tmp_path / "vol.nii", voxels)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<h", raw, 72, 8)  # float32 payload cannot be 8 bits
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptHeader):
        read_volume_array(path)


def test_big_endian_header_and_payload(tmp_path):
    """A hand-built big-endian int16 volume reads back with swapped bytes honored."""
    shape = (2, 3, 2)
    data = np.arange(12, dtype=">i2").reshape(shape, order="F")
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into(">i", hdr, 0, HEADER_SIZE)
    struct.pack_into(">8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into(">2h", hdr, 70, 4, 16)  # int16
    (tmp_path / "be.hdr").write_bytes(bytes(hdr))
    (tmp_path / "be.img").write_bytes(data.tobytes(order="F"))
    out = read_volume_array(tmp_path / "be.hdr")
    np.testing.assert_array_equal(out, np.arange(12).reshape(shape, order="F"))


def test_nifti_scaling_applied(tmp_path):
    """scl_slope/scl_inter rescale stored integers on read."""
    shape = (2, 2, 2)
    data = np.arange(8, dtype="<i2").reshape(shape, order="F")
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, 4, 16)
    struct.pack_into("<3f", hdr, 108, float(HEADER_SIZE + 4), 2.0, 1.0)
    hdr[344:348] = b"n+1\x00"
    path = tmp_path / "scaled.nii"
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + data.tobytes(order="F"))
    out = read_volume_array(path)
    np.testing.assert_allclose(out, np.arange(8).reshape(shape, order="F") * 2.0 + 1.0)


def test_analyze_pair_ignores_scaling_fields(tmp_path):
    shape = (2, 2, 2)
    data = np.arange(8, dtype="<i2").reshape(shape, order="F")
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, 4, 16)
    struct.pack_into("<3f", hdr, 108, 0.0, 2.0, 1.0)
    (tmp_path / "plain.hdr").write_bytes(bytes(hdr))
    (tmp_path / "plain.img").write_bytes(data.tobytes(order="F"))
    out = read_volume_array(tmp_path / "plain.hdr")
    np.testing.assert_array_equal(out, np.arange(8).reshape(shape, order="F"))


def test_trailing_singleton_dims_accepted(tmp_path, voxels):
    path = write_nifti(tmp_path / "vol.nii", voxels)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<8h", raw, 40, 4, 4, 5, 6, 1, 1, 1, 1)
    path.write_bytes(bytes(raw))
    np.testing.assert_array_equal(read_volume_array(path), voxels)


def test_true_4d_volume_rejected(tmp_path, voxels):
    path = write_nifti(tmp_path / "vol.nii", voxels)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<8h", raw, 40, 4, 4, 5, 3, 2, 1, 1, 1)
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedFormat):
        read_volume_array(path)
