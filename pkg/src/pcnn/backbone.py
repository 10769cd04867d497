"""Patch-feature extraction: views in, a flat set of located patches out.

A stack of stride-2 conv blocks turns each H x H view into a P x P grid
of D-dimensional patch features (P = H / 2^levels).  All views share
weights and batch-norm statistics within one model forward.  Patches are
flattened in the canonical order j = z*P*P + x*P + y with integer
coordinates (x row, y col, z view) attached; downstream layers consume
the flat set and the coordinates, never the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import BatchNorm, Conv2d, Module
from .tensor import Tensor


class ConfigError(ValueError):
    """Configuration is inconsistent with the data or with itself."""


@dataclass
class PatchSet:
    """M located patch features: features (M, D), coords (M, 3) ints."""

    features: Tensor
    coords: np.ndarray
    layout: tuple  # (P, D, N)

    @property
    def num_patches(self) -> int:
        return self.features.shape[0]


def canonical_coords(grid: int, num_views: int) -> np.ndarray:
    """Coordinates (x, y, z) for patch index j = z*P*P + x*P + y."""
    z, x, y = np.meshgrid(
        np.arange(num_views), np.arange(grid), np.arange(grid), indexing="ij"
    )
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1).astype(np.int64)


def _channel_schedule(levels: int, dim: int) -> list:
    """Half width at the first level, full width from the second on.

    Views are single-channel, so the trunk reaches usable width early;
    starving the first blocks costs accuracy at small view resolutions.
    """
    return [max(dim >> max(levels - 2 - level, 0), 2)
            for level in range(levels)]


class PatchBackbone(Module):
    """L blocks of (3x3 stride-2 conv, batch norm, LeakyReLU 0.2)."""

    def __init__(self, levels: int, dim: int, rng: np.random.Generator,
                 slope: float = 0.2):
        if levels < 1:
            raise ConfigError(f"need at least one level, got {levels}")
        self.convs = []
        self.norms = []
        c_in = 1
        for c_out in _channel_schedule(levels, dim):
            self.convs.append(Conv2d(c_in, c_out, rng, bias=False))
            self.norms.append(BatchNorm(c_out))
            c_in = c_out
        self.levels = levels
        self.dim = dim
        self.slope = slope

    def _stack_forward(self, views: np.ndarray, train: bool):
        """Feature rows for a stack of views; one norm pass for the stack."""
        num_views, h, _ = views.shape
        if h % (1 << self.levels) != 0:
            raise ConfigError(
                f"view size {h} not divisible by 2^{self.levels}"
            )
        x = Tensor(views.reshape(num_views, 1, h, h))
        for conv, norm in zip(self.convs, self.norms):
            x = conv.forward(x)
            n, c, hh, ww = x.shape
            # normalize over all positions of all views, per channel
            rows = T.reshape(T.transpose(x, (0, 2, 3, 1)), (n * hh * ww, c))
            rows = norm.forward(rows, train)
            rows = T.leaky_relu(rows, self.slope)
            x = T.transpose(T.reshape(rows, (n, hh, ww, c)), (0, 3, 1, 2))
        grid = h >> self.levels
        features = T.reshape(
            T.transpose(x, (0, 2, 3, 1)), (num_views * grid * grid, self.dim)
        )
        return features, grid

    def forward(self, views, train: bool) -> PatchSet:
        views = np.asarray(views, dtype=np.float64)
        if views.ndim != 3 or views.shape[1] != views.shape[2]:
            raise ConfigError(f"views must be (N, H, H), got {views.shape}")
        features, grid = self._stack_forward(views, train)
        num_views = views.shape[0]
        return PatchSet(
            features, canonical_coords(grid, num_views), (grid, self.dim, num_views)
        )

    def forward_batch(self, views_batch, train: bool) -> list:
        """Per-model patch sets with norm statistics pooled over the batch.

        Training statistics drawn from one model wander with that model's
        class; pooling the batch keeps them close to the running averages
        used at eval time.
        """
        views_batch = np.asarray(views_batch, dtype=np.float64)
        if views_batch.ndim != 4 or views_batch.shape[2] != views_batch.shape[3]:
            raise ConfigError(
                f"batch must be (B, N, H, H), got {views_batch.shape}"
            )
        num_models, num_views, h, _ = views_batch.shape
        stacked, grid = self._stack_forward(
            views_batch.reshape(num_models * num_views, h, h), train
        )
        rows_per_model = num_views * grid * grid
        coords = canonical_coords(grid, num_views)
        sets = []
        for b in range(num_models):
            rows = np.arange(b * rows_per_model, (b + 1) * rows_per_model)
            sets.append(PatchSet(
                T.gather_rows(stacked, rows), coords,
                (grid, self.dim, num_views),
            ))
        return sets


def patches_from_pvf(features) -> PatchSet:
    """Adapt one model's stored patch grid (N, P, P, D) to a PatchSet."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 4 or features.shape[1] != features.shape[2]:
        raise ConfigError(
            f"patch grid must be (N, P, P, D), got {features.shape}"
        )
    num_views, grid, _, dim = features.shape
    flat = Tensor(features.reshape(num_views * grid * grid, dim))
    return PatchSet(flat, canonical_coords(grid, num_views), (grid, dim, num_views))
