"""Versioned binary container for named tensors plus a JSON header.

Layout: magic, format version, length-prefixed canonical JSON header, then
for each tensor (in sorted name order) a length-prefixed JSON descriptor
{name, dtype, shape} followed by the raw little-endian C-order bytes.
Writing the same arrays and header twice produces byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ContractError

MAGIC = b"DOTC"
VERSION = 1

_DTYPES = {"<f4": "<f4", "<f8": "<f8"}


def _canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_tensors(path, named: dict[str, np.ndarray], header: dict | None = None) -> None:
    header_bytes = _canon(header or {})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(named)))
        for name in sorted(named):
            arr = np.ascontiguousarray(named[name])
            dtype = arr.dtype.newbyteorder("<").str
            if dtype not in _DTYPES:
                raise ContractError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
            desc = _canon({"name": name, "dtype": dtype, "shape": list(arr.shape)})
            fh.write(struct.pack("<Q", len(desc)))
            fh.write(desc)
            data = arr.astype(dtype, copy=False).tobytes(order="C")
            fh.write(struct.pack("<Q", len(data)))
            fh.write(data)


def load_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ContractError(f"{path} is not a tensor container")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ContractError(f"unsupported container version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (dlen,) = struct.unpack("<Q", fh.read(8))
            desc = json.loads(fh.read(dlen).decode("utf-8"))
            (blen,) = struct.unpack("<Q", fh.read(8))
            raw = fh.read(blen)
            arr = np.frombuffer(raw, dtype=desc["dtype"]).reshape(desc["shape"]).copy()
            tensors[desc["name"]] = arr
    return header, tensors
