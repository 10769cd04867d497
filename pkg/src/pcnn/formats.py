"""Binary containers for views, patch features, and embeddings.

Three little-endian formats share a layout: a 4-byte magic, u32 header
dimensions, then fixed-size per-model records.  Readers validate the
magic and sizes up front and raise FormatError carrying the byte offset
of the problem.

MVI1  rendered views      header (num_models, num_views, height, width)
      record: u32 label, u32 model_id, num_views*height*width float32
PVF1  patch features      header (num_models, num_views, grid, dim)
      record: u32 label, u32 model_id, num_views*grid*grid*dim float32
EMB1  shape embeddings    header (num_models, dim)
      record: u32 label, u32 model_id, u32 predicted_class, dim float32
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

MVI_MAGIC = b"MVI1"
PVF_MAGIC = b"PVF1"
EMB_MAGIC = b"EMB1"


class FormatError(ValueError):
    """Malformed container file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class ViewFile:
    """Rendered views, (num_models, num_views, height, width) float32."""

    views: np.ndarray
    labels: np.ndarray
    model_ids: np.ndarray


@dataclass
class PatchFile:
    """Patch features, (num_models, num_views, grid, grid, dim) float32."""

    features: np.ndarray
    labels: np.ndarray
    model_ids: np.ndarray


@dataclass
class EmbeddingFile:
    """Shape embeddings, (num_models, dim) float32, plus predicted classes."""

    embeddings: np.ndarray
    labels: np.ndarray
    model_ids: np.ndarray
    predicted: np.ndarray


@dataclass
class DatasetManifest:
    num_models: int
    num_classes: int
    num_views: int
    height: int
    width: int
    split: str
    seed: int

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            return cls(**json.load(f))


def _read_exact(f, n: int) -> bytes:
    offset = f.tell()
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(
            f"truncated file: wanted {n} bytes, got {len(buf)}", offset
        )
    return buf


def _read_header(f, magic: bytes, n_dims: int):
    got = _read_exact(f, 4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
    return struct.unpack(f"<{n_dims}I", _read_exact(f, 4 * n_dims))


def _check_views_shape(num_views: int, height: int, width: int, offset: int):
    if height != width:
        raise FormatError(f"views must be square, got {height}x{width}", offset)
    if num_views < 3:
        raise FormatError(f"need at least 3 views, got {num_views}", offset)


def write_mvi(path, data: ViewFile):
    views = np.ascontiguousarray(data.views, dtype="<f4")
    num_models, num_views, height, width = views.shape
    _check_views_shape(num_views, height, width, 4)
    with open(path, "wb") as f:
        f.write(MVI_MAGIC)
        f.write(struct.pack("<4I", num_models, num_views, height, width))
        for m in range(num_models):
            f.write(struct.pack("<2I", int(data.labels[m]), int(data.model_ids[m])))
            f.write(views[m].tobytes())


def read_mvi(path) -> ViewFile:
    with open(path, "rb") as f:
        num_models, num_views, height, width = _read_header(f, MVI_MAGIC, 4)
        _check_views_shape(num_views, height, width, 4)
        views = np.empty((num_models, num_views, height, width), dtype=np.float32)
        labels = np.empty(num_models, dtype=np.int64)
        model_ids = np.empty(num_models, dtype=np.int64)
        pixel_bytes = num_views * height * width * 4
        for m in range(num_models):
            labels[m], model_ids[m] = struct.unpack("<2I", _read_exact(f, 8))
            raw = np.frombuffer(_read_exact(f, pixel_bytes), dtype="<f4")
            views[m] = raw.reshape(num_views, height, width)
    return ViewFile(views, labels, model_ids)


def write_pvf(path, data: PatchFile):
    features = np.ascontiguousarray(data.features, dtype="<f4")
    num_models, num_views, grid, grid2, dim = features.shape
    if grid != grid2:
        raise FormatError(f"patch grid must be square, got {grid}x{grid2}", 4)
    if num_views < 3:
        raise FormatError(f"need at least 3 views, got {num_views}", 4)
    with open(path, "wb") as f:
        f.write(PVF_MAGIC)
        f.write(struct.pack("<4I", num_models, num_views, grid, dim))
        for m in range(num_models):
            f.write(struct.pack("<2I", int(data.labels[m]), int(data.model_ids[m])))
            f.write(features[m].tobytes())


def read_pvf(path) -> PatchFile:
    with open(path, "rb") as f:
        num_models, num_views, grid, dim = _read_header(f, PVF_MAGIC, 4)
        if num_views < 3:
            raise FormatError(f"need at least 3 views, got {num_views}", 4)
        features = np.empty(
            (num_models, num_views, grid, grid, dim), dtype=np.float32
        )
        labels = np.empty(num_models, dtype=np.int64)
        model_ids = np.empty(num_models, dtype=np.int64)
        feat_bytes = num_views * grid * grid * dim * 4
        for m in range(num_models):
            labels[m], model_ids[m] = struct.unpack("<2I", _read_exact(f, 8))
            raw = np.frombuffer(_read_exact(f, feat_bytes), dtype="<f4")
            features[m] = raw.reshape(num_views, grid, grid, dim)
    return PatchFile(features, labels, model_ids)


def write_emb(path, data: EmbeddingFile):
    embeddings = np.ascontiguousarray(data.embeddings, dtype="<f4")
    num_models, dim = embeddings.shape
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<2I", num_models, dim))
        for m in range(num_models):
            f.write(struct.pack(
                "<3I",
                int(data.labels[m]),
                int(data.model_ids[m]),
                int(data.predicted[m]),
            ))
            f.write(embeddings[m].tobytes())


def read_emb(path) -> EmbeddingFile:
    with open(path, "rb") as f:
        num_models, dim = _read_header(f, EMB_MAGIC, 2)
        embeddings = np.empty((num_models, dim), dtype=np.float32)
        labels = np.empty(num_models, dtype=np.int64)
        model_ids = np.empty(num_models, dtype=np.int64)
        predicted = np.empty(num_models, dtype=np.int64)
        for m in range(num_models):
            labels[m], model_ids[m], predicted[m] = struct.unpack(
                "<3I", _read_exact(f, 12)
            )
            raw = np.frombuffer(_read_exact(f, dim * 4), dtype="<f4")
            embeddings[m] = raw
    return EmbeddingFile(embeddings, labels, model_ids, predicted)


def sniff_magic(path) -> bytes:
    """First four bytes of a file, for input-kind dispatch."""
    with open(path, "rb") as f:
        return f.read(4)
