"""Checkpoint serialization for module parameters and buffers.

Format PCK1, little-endian: magic "PCK1", u32 entry count, then per
entry a u32 name length, the UTF-8 name, u32 rank, u32 dims, and the
float64 payload in C order.  Entries cover every parameter and every
buffer (batch-norm running statistics) under their slash-separated
module paths, so a load restores training state exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .formats import FormatError, _read_exact

PCK_MAGIC = b"PCK1"


def _entries(module):
    out = [(name, p.data) for name, p in module.named_params()]
    out.extend(module.named_buffers())
    return out


def save_checkpoint(module, path):
    entries = _entries(module)
    with open(path, "wb") as f:
        f.write(PCK_MAGIC)
        f.write(struct.pack("<I", len(entries)))
        for name, value in entries:
            payload = np.ascontiguousarray(value, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", payload.ndim))
            f.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
            f.write(payload.tobytes())


def read_checkpoint(path) -> dict:
    """Parse a checkpoint into a name -> float64 array mapping."""
    out = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != PCK_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {PCK_MAGIC!r}", 0)
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = np.frombuffer(_read_exact(f, n_items * 8), dtype="<f8")
            out[name] = raw.reshape(shape).astype(np.float64)
    return out


def load_checkpoint(module, path):
    """Restore parameters and buffers in place; names and shapes must match."""
    stored = read_checkpoint(path)
    expected = _entries(module)
    expected_names = [name for name, _ in expected]
    missing = sorted(set(expected_names) - set(stored))
    extra = sorted(set(stored) - set(expected_names))
    if missing or extra:
        raise FormatError(
            f"checkpoint entries do not match module: missing {missing}, "
            f"unexpected {extra}"
        )
    for name, target in expected:
        value = stored[name]
        if value.shape != target.shape:
            raise FormatError(
                f"checkpoint entry {name!r} has shape {value.shape}, "
                f"module expects {target.shape}"
            )
        target[...] = value
