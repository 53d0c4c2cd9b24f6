"""Single-file parameter checkpoints.

Layout::

    b"BIFT0001"                 8 bytes
    header length               uint64 little-endian
    header                      UTF-8 text, one tab-separated line per entry:
                                ``kind  name  d0,d1,...  offset``
                                plus ``meta  key  value`` lines
    payload                     raw little-endian float32, offsets relative
                                to the payload start
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .nn import Module

MAGIC = b"BIFT0001"


@dataclass
class ManifestEntry:
    kind: str  # "param" or "buffer"
    name: str
    shape: tuple
    offset: int

    @property
    def count(self):
        return int(np.prod(self.shape)) if self.shape else 1


@dataclass
class Checkpoint:
    entries: list
    arrays: dict
    meta: dict = field(default_factory=dict)

    def param_count(self):
        return sum(e.count for e in self.entries if e.kind == "param")


def save_checkpoint(path, model: Module, meta: dict | None = None):
    records = [("param", n, p.data) for n, p in model.named_parameters()]
    records += [("buffer", n, b) for n, b in model.named_buffers()]
    lines, chunks, offset = [], [], 0
    for kind, name, arr in records:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        dims = ",".join(str(d) for d in arr.shape)
        lines.append(f"{kind}\t{name}\t{dims}\t{offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    for key, value in (meta or {}).items():
        lines.append(f"meta\t{key}\t{value}")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:8]!r}", offset=0)
    if len(raw) < 16:
        raise FormatError("truncated checkpoint header length", offset=8)
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise FormatError("truncated checkpoint header", offset=16)
    payload = memoryview(raw)[16 + hlen:]
    entries, arrays, meta = [], {}, {}
    for line in raw[16:16 + hlen].decode("utf-8").splitlines():
        parts = line.split("\t", 3)
        if parts[0] == "meta":
            meta[parts[1]] = parts[2]
            continue
        kind, name, dims, offset = parts
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        entry = ManifestEntry(kind, name, shape, int(offset))
        end = entry.offset + 4 * entry.count
        if end > len(payload):
            raise FormatError(f"payload for {name!r} truncated", offset=16 + hlen + len(payload))
        arrays[name] = np.frombuffer(payload[entry.offset:end], dtype="<f4").reshape(shape).copy()
        entries.append(entry)
    return Checkpoint(entries, arrays, meta)


def load_into(model: Module, ckpt: Checkpoint, strict=True):
    """Copy checkpoint arrays into ``model`` parameters and buffers in place."""
    expected = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    missing = [n for n in list(expected) + list(buffers) if n not in ckpt.arrays]
    if strict and missing:
        raise FormatError(f"checkpoint lacks entries: {missing[:5]}")
    for name, p in expected.items():
        if name in ckpt.arrays:
            arr = ckpt.arrays[name]
            if arr.shape != p.shape:
                raise FormatError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data[...] = arr
    for name, buf in buffers.items():
        if name in ckpt.arrays:
            buf[...] = ckpt.arrays[name]
