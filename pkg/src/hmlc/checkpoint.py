"""Versioned binary checkpoints.

Layout: an 8-byte magic string, a little-endian uint64 header length, a
canonical JSON header (sorted keys, no whitespace), then the raw array bytes
concatenated in header order. Arrays are stored little-endian, C-contiguous,
sorted by name, so the same parameter values always produce the same bytes.

The header carries a ``config_hash``; loading refuses a checkpoint whose hash
differs from the configuration it is being loaded into.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"HMLCCKP1"
_FORMAT_VERSION = 1
_DTYPE_CODES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


class ConfigHashMismatch(CheckpointError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], config_hash: str,
                    meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = arr.dtype.newbyteorder("<").str
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = arr.astype(code, copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": code,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": _FORMAT_VERSION,
        "config_hash": config_hash,
        "meta": meta or {},
        "arrays": entries,
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(hdr)))
        f.write(hdr)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path, expect_config_hash: str | None = None):
    """Return ``(arrays, header)``. If ``expect_config_hash`` is given and does
    not match the stored hash, raise ``ConfigHashMismatch``."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (hdr_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hdr_len).decode("utf-8"))
        if header.get("format_version") != _FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {header.get('format_version')!r}")
        if expect_config_hash is not None and header["config_hash"] != expect_config_hash:
            raise ConfigHashMismatch(
                f"{path}: checkpoint was written under a different configuration "
                f"({header['config_hash'][:12]}… vs expected {expect_config_hash[:12]}…)")
        payload = f.read()
    arrays = {}
    for ent in header["arrays"]:
        dtype = _DTYPE_CODES.get(ent["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unsupported dtype {ent['dtype']!r}")
        raw = payload[ent["offset"]:ent["offset"] + ent["nbytes"]]
        if len(raw) != ent["nbytes"]:
            raise CheckpointError(f"{path}: truncated array {ent['name']!r}")
        arrays[ent["name"]] = np.frombuffer(raw, dtype=dtype).reshape(ent["shape"]).copy()
    return arrays, header
