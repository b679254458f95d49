"""Binary container for named arrays.

Layout::

    bytes 0..3    magic b"KGT1"
    bytes 4..7    uint32 little-endian header length H
    bytes 8..8+H  UTF-8 JSON header
    remainder     tensor payloads, concatenated in header order

The header is ``{"meta": {...}, "tensors": [entry, ...]}`` where each entry
holds ``name``, ``shape``, ``dtype`` (numpy name), ``nbytes`` and a sha256
checksum of the payload block.  Payloads are row-major little-endian.
Writes go to a temp file in the target directory and are renamed into
place, so concurrent writers never expose a half-written file.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ChecksumMismatch, IOFailure, UnsupportedFormat

MAGIC = b"KGT1"


def _payload_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def write_tensors(path: str | os.PathLike, tensors: dict[str, np.ndarray],
                  meta: Optional[dict] = None) -> None:
    path = Path(path)
    entries = []
    payloads = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        blob = _payload_bytes(arr)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "nbytes": len(blob),
            "sha256": hashlib.sha256(blob).hexdigest(),
        })
        payloads.append(blob)
    header = json.dumps({"meta": meta or {}, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(MAGIC)
                fh.write(struct.pack("<I", len(header)))
                fh.write(header)
                for blob in payloads:
                    fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def read_tensors(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise UnsupportedFormat(f"{path} is not a tensor container")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise IOFailure(f"{path} is truncated (incomplete header)")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IOFailure(f"{path} has a corrupt header: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    offset = 8 + hlen
    for entry in header["tensors"]:
        nbytes = entry["nbytes"]
        blob = raw[offset:offset + nbytes]
        if len(blob) != nbytes:
            raise IOFailure(f"{path} is truncated (tensor {entry['name']})")
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise ChecksumMismatch(f"checksum mismatch for tensor {entry['name']} in {path}")
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        arr = np.frombuffer(blob, dtype=dtype).reshape(entry["shape"])
        # Copy so callers get a writable, native-byte-order array.
        tensors[entry["name"]] = arr.astype(np.dtype(entry["dtype"]), copy=True)
        offset += nbytes
    return tensors, header.get("meta", {})


def write_tensor(path, arr: np.ndarray, meta: Optional[dict] = None) -> None:
    write_tensors(path, {"data": arr}, meta=meta)


def read_tensor(path) -> tuple[np.ndarray, dict]:
    tensors, meta = read_tensors(path)
    if "data" not in tensors:
        raise UnsupportedFormat(f"{path} does not hold a single 'data' tensor")
    return tensors["data"], meta
