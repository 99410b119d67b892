"""Flat-file envelope for model parameters.

Layout: a magic line, one line of JSON header (format tag, version, caller
metadata, array names and shapes), then every array's float64 values in
little-endian byte order, in header order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"RNNSECURE\n"
FORMAT_VERSION = 1


def dump(path, fmt: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = {
        "format": fmt,
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "arrays": [[name, list(np.shape(a))] for name, a in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load(path, fmt: str):
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a model file")
    end = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC):end].decode("utf-8"))
    if header["format"] != fmt:
        raise ValueError(f"{path}: holds a {header['format']!r} model, expected {fmt!r}")
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header['format_version']}")
    offset = end + 1
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["meta"], arrays
