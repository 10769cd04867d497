"""Deterministic synthetic multi-view silhouette datasets.

Each model is an analytic solid with per-model jitter (uniform scale,
vertical aspect stretch, axis tilt).  View z is the orthographic
silhouette along +y after spinning the solid z*(360/N) degrees about
the vertical axis; the tilt sits outside the spin, like a camera with
fixed elevation watching a turntable.  Pixels are the mean of a 3x3
subsample grid of binary inside/outside ray tests (1-pixel box filter).

Rendering one model depends only on (seed, split, model index), so
models are generated on independent streams and could be rendered in
parallel; this implementation walks them in order.
"""

from __future__ import annotations

import numpy as np

from .formats import DatasetManifest, ViewFile

SPLIT_CODES = {"train": 0, "test": 1}

SUBSAMPLES = 3       # antialiasing subsamples per pixel axis
RAY_STEPS = 96       # inside/outside tests along each ray
RAY_SPAN = 1.05      # rays cover y in [-RAY_SPAN, RAY_SPAN]

SCALE_RANGE = (0.6, 1.0)
ASPECT_RANGE = (0.7, 1.3)
TILT_MAX_DEG = 20.0


def _inside_sphere(qx, qy, qz):
    r = 0.70
    return qx * qx + qy * qy + qz * qz <= r * r


def _inside_box(qx, qy, qz):
    return (np.abs(qx) <= 0.60) & (np.abs(qy) <= 0.38) & (np.abs(qz) <= 0.52)


def _inside_cylinder(qx, qy, qz):
    r = 0.40
    return (qx * qx + qy * qy <= r * r) & (np.abs(qz) <= 0.60)


def _inside_pyramid(qx, qy, qz):
    base, lo, hi = 0.55, -0.50, 0.65
    width = base * (hi - qz) / (hi - lo)
    return (qz >= lo) & (qz <= hi) & (np.abs(qx) <= width) & (np.abs(qy) <= width)


def _inside_torus(qx, qy, qz):
    major, minor = 0.52, 0.18
    ring = np.sqrt(qx * qx + qy * qy) - major
    return ring * ring + qz * qz <= minor * minor


# (inside test, symmetric about the vertical axis).  Axisymmetric solids
# skip the spin entirely, so their views are bitwise identical.
SOLIDS = {
    "sphere": (_inside_sphere, True),
    "box": (_inside_box, False),
    "cylinder": (_inside_cylinder, True),
    "pyramid": (_inside_pyramid, False),
    "torus": (_inside_torus, True),
}


def ring_cos_sin(k: int, n: int):
    """cos/sin of 2*pi*k/n with the half-turn folded out exactly.

    For even n this guarantees the angle at k + n/2 is the exact
    floating-point negation of the angle at k, so silhouettes related by
    a half turn come out bitwise identical.
    """
    k = k % n
    if n % 2 == 0 and k >= n // 2:
        c, s = ring_cos_sin(k - n // 2, n)
        return -c, -s
    angle = 2.0 * np.pi * k / n
    return float(np.cos(angle)), float(np.sin(angle))


def _tilt_matrix(direction: float, angle: float) -> np.ndarray:
    """Rotation by ``angle`` about the horizontal axis (cos d, sin d, 0)."""
    ux, uy = np.cos(direction), np.sin(direction)
    c, s = np.cos(angle), np.sin(angle)
    axis = np.array([ux, uy, 0.0])
    cross = np.array([[0.0, 0.0, uy], [0.0, 0.0, -ux], [-uy, ux, 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(axis, axis)


def _spin_matrix(c: float, s: float) -> np.ndarray:
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class Jitter:
    """Per-model pose parameters drawn in a fixed order from one stream."""

    def __init__(self, rng: np.random.Generator):
        self.scale = float(rng.uniform(*SCALE_RANGE))
        self.aspect = float(rng.uniform(*ASPECT_RANGE))
        self.tilt_angle = float(rng.uniform(0.0, np.deg2rad(TILT_MAX_DEG)))
        self.tilt_direction = float(rng.uniform(0.0, 2.0 * np.pi))


def render_model(class_name: str, jitter: Jitter, num_views: int,
                 res: int) -> np.ndarray:
    """Render all views of one jittered solid, (num_views, res, res) float32."""
    if class_name not in SOLIDS:
        raise ValueError(
            f"unknown class {class_name!r}; choose from {sorted(SOLIDS)}"
        )
    inside, axisymmetric = SOLIDS[class_name]

    fine = res * SUBSAMPLES
    xs = -1.0 + (np.arange(fine) + 0.5) * (2.0 / fine)   # screen x, left to right
    zs = 1.0 - (np.arange(fine) + 0.5) * (2.0 / fine)    # screen z, top row first
    ys = np.linspace(-RAY_SPAN, RAY_SPAN, RAY_STEPS)     # depth along the ray

    inv_shape = np.diag([
        1.0 / jitter.scale,
        1.0 / jitter.scale,
        1.0 / (jitter.scale * jitter.aspect),
    ])
    tilt_inv = _tilt_matrix(jitter.tilt_direction, jitter.tilt_angle).T

    views = np.empty((num_views, res, res), dtype=np.float32)
    for z in range(num_views):
        if axisymmetric:
            m = inv_shape @ tilt_inv
        else:
            c, s = ring_cos_sin(z, num_views)
            m = inv_shape @ _spin_matrix(c, s).T @ tilt_inv
        # q[i, j, t] = m @ p for p = (xs[j], ys[t], zs[i])
        qx = m[0, 0] * xs[None, :, None] + m[0, 1] * ys[None, None, :] \
            + m[0, 2] * zs[:, None, None]
        qy = m[1, 0] * xs[None, :, None] + m[1, 1] * ys[None, None, :] \
            + m[1, 2] * zs[:, None, None]
        qz = m[2, 0] * xs[None, :, None] + m[2, 1] * ys[None, None, :] \
            + m[2, 2] * zs[:, None, None]
        hit = inside(qx, qy, qz).any(axis=2)
        coarse = hit.astype(np.float64).reshape(res, SUBSAMPLES, res, SUBSAMPLES)
        views[z] = coarse.mean(axis=(1, 3)).astype(np.float32)
    return views


def generate(classes, per_class: int, num_views: int, res: int, seed: int,
             split: str) -> ViewFile:
    """Build one split of a dataset; pure function of its arguments."""
    if num_views < 3:
        raise ValueError(f"need at least 3 views, got {num_views}")
    if res < 16:
        raise ValueError(f"resolution must be at least 16, got {res}")
    if split not in SPLIT_CODES:
        raise ValueError(f"split must be one of {sorted(SPLIT_CODES)}")
    for name in classes:
        if name not in SOLIDS:
            raise ValueError(
                f"unknown class {name!r}; choose from {sorted(SOLIDS)}"
            )
    split_code = SPLIT_CODES[split]
    num_models = len(classes) * per_class
    views = np.empty((num_models, num_views, res, res), dtype=np.float32)
    labels = np.empty(num_models, dtype=np.int64)
    model_ids = np.empty(num_models, dtype=np.int64)
    index = 0
    for class_idx, name in enumerate(classes):
        for _ in range(per_class):
            rng = np.random.default_rng([seed, split_code, index])
            views[index] = render_model(name, Jitter(rng), num_views, res)
            labels[index] = class_idx
            model_ids[index] = index
            index += 1
    return ViewFile(views, labels, model_ids)


def manifest_for(data: ViewFile, classes, split: str, seed: int) -> DatasetManifest:
    num_models, num_views, height, width = data.views.shape
    return DatasetManifest(
        num_models=num_models,
        num_classes=len(classes),
        num_views=num_views,
        height=height,
        width=width,
        split=split,
        seed=seed,
    )
