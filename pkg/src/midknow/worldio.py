"""Deterministic byte encoding for model worlds.

Layout: ``u32`` header length, UTF-8 JSON header (sorted keys), then each
array's raw little-endian bytes in header order.  The header records the owning
model id so a payload can only be decoded by the model that wrote it.
"""

from __future__ import annotations

import json
import struct
from typing import Any, Mapping

import numpy as np


class WorldFormatError(ValueError):
    pass


def pack_world(model_id: str, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> bytes:
    specs = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        specs.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        chunks.append(arr.astype(dtype, copy=False).tobytes())
    header = json.dumps(
        {"model_id": model_id, "meta": meta, "arrays": specs},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return struct.pack("<I", len(header)) + header + b"".join(chunks)


def unpack_world(model_id: str, blob: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    try:
        (hlen,) = struct.unpack_from("<I", blob, 0)
        header = json.loads(blob[4 : 4 + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WorldFormatError("unreadable world header") from exc
    if header.get("model_id") != model_id:
        raise WorldFormatError(
            f"world payload belongs to model {header.get('model_id')!r}, not {model_id!r}"
        )
    offset = 4 + hlen
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise WorldFormatError(f"truncated array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(blob):
        raise WorldFormatError("trailing bytes after world arrays")
    return header["meta"], arrays
