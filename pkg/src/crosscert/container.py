"""Byte-deterministic binary container for named float/int arrays.

Layout:
    8 bytes   magic b"XCERT001"
    8 bytes   header length H as little-endian uint64
    H bytes   canonical JSON header (sorted keys, no whitespace, UTF-8)
    payload   raw array bytes, C order, little-endian, concatenated in
              the order listed under header["arrays"]

The header holds arbitrary JSON metadata under "meta" and, per array, its
name, dtype code ("<f8" or "<i8"), and shape. Identical inputs always
produce identical bytes, which makes file hashes meaningful as run
fingerprints.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CacheFormatError

MAGIC = b"XCERT001"
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write metadata and named arrays to ``path`` deterministically."""
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8", copy=False)
            code = "<f8"
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8", copy=False)
            code = "<i8"
        else:
            raise CacheFormatError(f"unsupported dtype {arr.dtype} for array {name!r}")
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = _canonical_json({"meta": meta, "arrays": entries})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (meta, arrays) written by :func:`write_container`."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CacheFormatError(f"bad magic {magic!r} in {path}")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise CacheFormatError(f"truncated header length in {path}")
        (hlen,) = struct.unpack("<Q", raw_len)
        if hlen > 1 << 30:
            raise CacheFormatError(f"absurd header length {hlen} in {path}")
        header_bytes = fh.read(hlen)
        if len(header_bytes) != hlen:
            raise CacheFormatError(f"truncated header in {path}")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CacheFormatError(f"malformed header in {path}: {exc}") from exc
        if not isinstance(header, dict) or "meta" not in header or "arrays" not in header:
            raise CacheFormatError(f"header missing required keys in {path}")
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            try:
                name, code, shape = entry["name"], entry["dtype"], tuple(entry["shape"])
            except (TypeError, KeyError) as exc:
                raise CacheFormatError(f"malformed array entry in {path}: {entry!r}") from exc
            if code not in _DTYPES:
                raise CacheFormatError(f"unknown dtype code {code!r} in {path}")
            count = 1
            for dim in shape:
                if not isinstance(dim, int) or dim < 0:
                    raise CacheFormatError(f"bad shape {shape!r} in {path}")
                count *= dim
            blob = fh.read(count * 8)
            if len(blob) != count * 8:
                raise CacheFormatError(f"truncated payload for array {name!r} in {path}")
            arrays[name] = np.frombuffer(blob, dtype=_DTYPES[code]).reshape(shape).copy()
        return header["meta"], arrays
