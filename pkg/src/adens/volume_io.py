"""Minimal reader/writer for Analyze 7.5 (.hdr/.img) and NIfTI-1 (.nii) volumes.

Both formats share a 348-byte header layout; NIfTI-1 adds a magic string at
offset 344 and intensity scaling fields. Voxel data is stored Fortran-order
(x fastest), so arrays round-trip with shape (X, Y, Z).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from adens.errors import CorruptHeader, MissingFile, ShapeMismatch, UnsupportedFormat

HEADER_SIZE = 348
NIFTI_SINGLE_MAGIC = b"n+1\x00"
NIFTI_PAIR_MAGIC = b"ni1\x00"

# datatype code -> numpy dtype character; the codes are shared by both formats
_DTYPE_CODES = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
}
_FLOAT32_CODE = 16


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise MissingFile(f"no such file: {path}")
    return path.read_bytes()


def _parse_header(raw: bytes) -> dict:
    if len(raw) < HEADER_SIZE:
        raise CorruptHeader(f"header is {len(raw)} bytes, expected at least {HEADER_SIZE}")
    for endian in ("<", ">"):
        if struct.unpack_from(endian + "i", raw, 0)[0] == HEADER_SIZE:
            break
    else:
        raise CorruptHeader("sizeof_hdr is not 348 in either byte order")

    dim = struct.unpack_from(endian + "8h", raw, 40)
    datatype, bitpix = struct.unpack_from(endian + "2h", raw, 70)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(endian + "3f", raw, 108)
    magic = raw[344:348]

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise CorruptHeader(f"dim[0]={ndim} outside 1..7")
    if ndim < 3:
        raise UnsupportedFormat(f"expected a 3-D volume, header declares {ndim}-D")
    if any(d > 1 for d in dim[4 : ndim + 1]):
        raise UnsupportedFormat(f"expected a 3-D volume, got dims {dim[1:ndim + 1]}")
    shape = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in shape):
        raise CorruptHeader(f"non-positive spatial dims {shape}")

    if datatype not in _DTYPE_CODES:
        raise UnsupportedFormat(f"unsupported datatype code {datatype}")
    dtype = np.dtype(endian + _DTYPE_CODES[datatype])
    if bitpix != dtype.itemsize * 8:
        raise CorruptHeader(f"bitpix {bitpix} does not match datatype code {datatype}")

    return {
        "shape": shape,
        "dtype": dtype,
        "vox_offset": vox_offset,
        "scl_slope": scl_slope,
        "scl_inter": scl_inter,
        "magic": magic,
    }


def _decode_payload(payload: bytes, hdr: dict, scaled: bool) -> np.ndarray:
    shape = hdr["shape"]
    dtype = hdr["dtype"]
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise ShapeMismatch(
            f"payload is {len(payload)} bytes, header shape {shape} needs {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    arr = arr.astype(np.float32)
    if scaled:
        slope, inter = hdr["scl_slope"], hdr["scl_inter"]
        if slope not in (0.0, 1.0) or inter != 0.0:
            arr = arr * np.float32(slope or 1.0) + np.float32(inter)
    if not np.isfinite(arr).all():
        raise CorruptHeader("volume contains non-finite intensities")
    return arr


def read_volume_array(path: str | Path) -> np.ndarray:
    """Read a .nii file or a .hdr/.img pair into a float32 (X, Y, Z) array."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".nii":
        raw = _read_bytes(path)
        hdr = _parse_header(raw)
        if hdr["magic"] != NIFTI_SINGLE_MAGIC:
            raise UnsupportedFormat(f"{path} is not a single-file NIfTI-1 volume")
        offset = int(hdr["vox_offset"])
        if offset < HEADER_SIZE:
            raise CorruptHeader(f"vox_offset {offset} points inside the header")
        if offset > len(raw):
            raise ShapeMismatch(f"vox_offset {offset} beyond file end {len(raw)}")
        return _decode_payload(raw[offset:], hdr, scaled=True)

    if suffix in (".hdr", ".img"):
        hdr_path = path.with_suffix(".hdr")
        img_path = path.with_suffix(".img")
        hdr = _parse_header(_read_bytes(hdr_path))
        magic = hdr["magic"]
        if magic == NIFTI_SINGLE_MAGIC:
            raise UnsupportedFormat(f"{hdr_path} declares single-file NIfTI but is a pair")
        is_nifti_pair = magic == NIFTI_PAIR_MAGIC
        payload = _read_bytes(img_path)
        offset = max(int(hdr["vox_offset"]), 0) if is_nifti_pair else 0
        if offset > len(payload):
            raise ShapeMismatch(f"vox_offset {offset} beyond image end {len(payload)}")
        return _decode_payload(payload[offset:], hdr, scaled=is_nifti_pair)

    raise UnsupportedFormat(
        f"cannot read {path}: expected .nii or a .hdr/.img Analyze pair"
    )


def _build_header(shape: tuple[int, int, int], magic: bytes, vox_offset: float) -> bytes:
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")
    struct.pack_into("<8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, _FLOAT32_CODE, 32)
    struct.pack_into("<8f", hdr, 76, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", hdr, 108, vox_offset, 1.0, 0.0)
    hdr[344:348] = magic
    return bytes(hdr)


def _voxel_bytes(voxels: np.ndarray) -> tuple[bytes, tuple[int, int, int]]:
    arr = np.asarray(voxels)
    if arr.ndim != 3:
        raise UnsupportedFormat(f"can only write 3-D volumes, got shape {arr.shape}")
    arr = arr.astype("<f4")
    return arr.tobytes(order="F"), arr.shape


def write_nifti(path: str | Path, voxels: np.ndarray) -> Path:
    """Write a single-file NIfTI-1 volume (float32, little-endian)."""
    path = Path(path)
    payload, shape = _voxel_bytes(voxels)
    # 4 zero bytes after the header mark "no extensions"; data starts at 352
    header = _build_header(shape, NIFTI_SINGLE_MAGIC, vox_offset=HEADER_SIZE + 4.0)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + b"\x00\x00\x00\x00" + payload)
    return path


def write_analyze(path: str | Path, voxels: np.ndarray) -> Path:
    """Write an Analyze 7.5 .hdr/.img pair; `path` may carry either suffix."""
    path = Path(path)
    payload, shape = _voxel_bytes(voxels)
    header = _build_header(shape, b"\x00\x00\x00\x00", vox_offset=0.0)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.with_suffix(".hdr").write_bytes(header)
    path.with_suffix(".img").write_bytes(payload)
    return path.with_suffix(".hdr")
