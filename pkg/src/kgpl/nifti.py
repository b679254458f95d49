"""Minimal single-file NIfTI-1 reader/writer.

Covers what volumes and label maps need: 3D grids, voxel spacing, origin.
Little-endian only, identity orientation (axis-aligned sform/qform).
Data is stored x-fastest (Fortran order) as NIfTI expects, optionally
gzip-compressed when the filename ends in ``.gz``.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import IOFailure, UnsupportedFormat

HEADER_SIZE = 348
VOX_OFFSET = 352.0
MAGIC = b"n+1\x00"

_DTYPE_CODES = {
    np.dtype("uint8"): 2,
    np.dtype("int16"): 4,
    np.dtype("int32"): 8,
    np.dtype("float32"): 16,
    np.dtype("float64"): 64,
    np.dtype("int8"): 256,
    np.dtype("uint16"): 512,
    np.dtype("uint32"): 768,
    np.dtype("int64"): 1024,
    np.dtype("uint64"): 1280,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _open(path: Path, mode: str):
    if path.name.endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def write_nifti(path, data: np.ndarray, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> None:
    path = Path(path)
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise UnsupportedFormat(f"only 3D grids are supported, got shape {arr.shape}")
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    code = _DTYPE_CODES[arr.dtype]
    bitpix = arr.dtype.itemsize * 8
    sx, sy, sz = (float(s) for s in spacing)
    ox, oy, oz = (float(o) for o in origin)

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, arr.shape[0], arr.shape[1], arr.shape[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, VOX_OFFSET)
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    struct.pack_into("<b", hdr, 123, 2)    # xyzt_units: millimeters
    struct.pack_into("<h", hdr, 252, 1)    # qform_code
    struct.pack_into("<h", hdr, 254, 1)    # sform_code
    struct.pack_into("<3f", hdr, 256, 0.0, 0.0, 0.0)  # identity quaternion
    struct.pack_into("<3f", hdr, 268, ox, oy, oz)
    struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, ox)
    struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, oy)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, oz)
    hdr[344:348] = MAGIC

    try:
        with _open(path, "wb") as fh:
            fh.write(bytes(hdr))
            fh.write(b"\x00\x00\x00\x00")  # no header extensions
            fh.write(arr.tobytes(order="F"))
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def read_nifti(path) -> tuple[np.ndarray, tuple[float, float, float], tuple[float, float, float]]:
    path = Path(path)
    try:
        with _open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER_SIZE + 4:
        raise IOFailure(f"{path} is truncated (no complete header)")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise UnsupportedFormat(f"{path} is not a little-endian NIfTI-1 file")
    if raw[344:348] not in (MAGIC, b"ni1\x00"):
        raise UnsupportedFormat(f"{path} has an unknown NIfTI magic {raw[344:348]!r}")
    dim = struct.unpack_from("<8h", raw, 40)
    if dim[0] != 3 and not (dim[0] > 3 and all(d == 1 for d in dim[4:dim[0] + 1])):
        raise UnsupportedFormat(f"{path} is not a 3D volume (dim={dim})")
    shape = tuple(int(d) for d in dim[1:4])
    (datatype,) = struct.unpack_from("<h", raw, 70)
    if datatype not in _CODE_DTYPES:
        raise UnsupportedFormat(f"{path} has unsupported datatype code {datatype}")
    dtype = _CODE_DTYPES[datatype]
    pixdim = struct.unpack_from("<8f", raw, 76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    slope, inter = struct.unpack_from("<2f", raw, 112)
    (qform_code,) = struct.unpack_from("<h", raw, 252)
    if qform_code >= 1:
        origin = struct.unpack_from("<3f", raw, 268)
    else:
        srow = [struct.unpack_from("<4f", raw, 280 + 16 * r) for r in range(3)]
        origin = (srow[0][3], srow[1][3], srow[2][3])

    start = int(vox_offset)
    nbytes = int(np.prod(shape)) * dtype.itemsize
    payload = raw[start:start + nbytes]
    if len(payload) != nbytes:
        raise IOFailure(f"{path} is truncated (expected {nbytes} data bytes)")
    arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).reshape(shape, order="F")
    arr = arr.astype(dtype, copy=True)
    if slope not in (0.0, 1.0) or inter != 0.0:
        arr = arr.astype(np.float32) * (slope if slope != 0.0 else 1.0) + inter
    return arr, spacing, tuple(float(o) for o in origin)
