"""Byte-deterministic checkpoint container.

A bundle is a single file: one compact JSON manifest line (sorted keys)
followed by the raw bytes of every array, concatenated in sorted-name
order as little-endian C-contiguous data.  Writing the same logical
content therefore always produces the same bytes, which zip-based formats
with embedded timestamps do not guarantee.
"""

from __future__ import annotations

import json
from typing import Any, Dict, Mapping, Tuple

import numpy as np

__all__ = ["save_bundle", "load_bundle", "BundleError"]

_FORMAT = "vsbundle"
_VERSION = 1

# dtype tag -> (numpy little-endian dtype, bytes per element)
_DTYPES = {
    "f8": np.dtype("<f8"),
    "i8": np.dtype("<i8"),
}


class BundleError(ValueError):
    """Raised when a file does not parse as a valid bundle."""


def _jsonable(value: Any) -> Any:
    """Coerce numpy scalars/arrays hiding inside meta into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    return value


def _dtype_tag(arr: np.ndarray) -> str:
    kind = arr.dtype.kind
    if kind == "f":
        return "f8"
    if kind in ("i", "u", "b"):
        return "i8"
    raise BundleError(f"unsupported array dtype {arr.dtype}")


def save_bundle(path, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    """Write meta (JSON-able mapping) and named arrays to ``path``.

    Float arrays are stored as float64, integer and boolean arrays as
    int64.  Array order in the file is sorted by name, independent of the
    mapping's insertion order.
    """
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        tag = _dtype_tag(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[tag])
        entries.append({"name": name, "shape": list(arr.shape), "dtype": tag})
        blobs.append(data.tobytes(order="C"))
    manifest = {
        "format": _FORMAT,
        "version": _VERSION,
        "meta": _jsonable(dict(meta)),
        "arrays": entries,
    }
    line = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(line.encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_bundle(path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read a bundle back; inverse of :func:`save_bundle`."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            manifest = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BundleError(f"not a bundle file: {path}") from exc
        if manifest.get("format") != _FORMAT:
            raise BundleError(f"unexpected format tag in {path}")
        if manifest.get("version") != _VERSION:
            raise BundleError(
                f"unsupported bundle version {manifest.get('version')} in {path}"
            )
        arrays: Dict[str, np.ndarray] = {}
        for entry in manifest["arrays"]:
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = fh.read(count * dtype.itemsize)
            if len(data) != count * dtype.itemsize:
                raise BundleError(f"truncated bundle {path} at array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise BundleError(f"trailing bytes after arrays in {path}")
    return manifest["meta"], arrays
