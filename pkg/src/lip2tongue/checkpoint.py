"""Portable parameter checkpoints.

Layout (all header text is ASCII, lines end in ``\\n``)::

    L2T-CKPT 1
    meta <key> <value>                  # zero or more
    tensor <name> <byte_offset> <shape> # shape as d0xd1x...; "scalar" for 0-d
    end
    <payload>

The payload begins immediately after the ``end`` line and holds every tensor
as little-endian float32 in row-major order; ``byte_offset`` is relative to
the start of the payload. Names and meta values may not contain whitespace.
Entries are written in insertion order, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DimensionError, UsageError

MAGIC = "L2T-CKPT 1"


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    lines = [MAGIC]
    for key, value in (meta or {}).items():
        text = str(value)
        if any(c.isspace() for c in text) or any(c.isspace() for c in key):
            raise UsageError(f"checkpoint meta {key!r} contains whitespace")
        lines.append(f"meta {key} {text}")
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        if any(c.isspace() for c in name):
            raise UsageError(f"checkpoint name {name!r} contains whitespace")
        a = np.asarray(arr, dtype="<f4")  # tobytes() is row-major; ascontiguousarray would promote 0-d
        lines.append(f"tensor {name} {offset} {_shape_str(a.shape)}")
        blobs.append(a.tobytes())
        offset += a.nbytes
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``; arrays are float32 numpy arrays."""
    raw = Path(path).read_bytes()
    pos = 0
    entries = []
    meta = {}
    first = True
    while True:
        nl = raw.index(b"\n", pos)
        line = raw[pos:nl].decode("ascii")
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise UsageError(f"{path}: not a checkpoint (header {line!r})")
            first = False
            continue
        if line == "end":
            break
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = value
        elif kind == "tensor":
            name, off, shape = rest.split(" ")
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            entries.append((name, int(off), dims))
        else:
            raise UsageError(f"{path}: unknown header line {line!r}")
    payload = memoryview(raw)[pos:]
    arrays = {}
    for name, off, dims in entries:
        count = int(np.prod(dims)) if dims else 1
        if off + 4 * count > len(payload):
            raise DimensionError(f"{path}: tensor {name} runs past end of payload")
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=count, offset=off).reshape(dims).astype(np.float32)
    return arrays, meta
