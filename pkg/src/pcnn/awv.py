"""Adaptive view weighting: cosine attention against the view-pooling feature.

Per-view features are scored by cosine similarity to their channelwise
maximum g, softmax turns the scores into weights alpha, and the fusion
feature g' is the alpha-weighted sum of view features.  A circular
kernel-3 convolution mixes adjacent views first, since neighboring
camera positions see correlated silhouettes.  When the layer is
disabled, fusion falls back to the plain channelwise maximum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import CircularConv1d, Module
from .tensor import Tensor


@dataclass
class FusionState:
    """Everything the fusion step produced for one model."""

    g: Tensor                    # (D,) channelwise max over views
    scores: Optional[Tensor]     # (N,) cosine similarities to g
    alpha: Optional[Tensor]      # (N,) attention weights, None if disabled
    f_weighted: Tensor           # (N, D) weighted view features
    g_fused: Tensor              # (D,) fusion feature


def pool_views(features: Tensor, layout: tuple) -> Tensor:
    """Mean over each view's patches: (M, D) -> (N, D)."""
    grid, dim, num_views = layout
    per_view = T.reshape(features, (num_views, grid * grid, dim))
    return T.mean_over_axis(per_view, axis=1)


def attention_weights(view_feats: Tensor) -> FusionState:
    """Score, weight, and fuse per-view features (N, D)."""
    num_views, dim = view_feats.shape
    g, _ = T.max_over_axis(view_feats, axis=0)
    scores = T.concat(
        [
            T.reshape(
                T.cosine_similarity(
                    T.reshape(T.gather_rows(view_feats, [j]), (dim,)), g
                ),
                (1,),
            )
            for j in range(num_views)
        ],
        axis=0,
    )
    alpha = T.softmax(scores)
    f_weighted = T.mul(view_feats, T.reshape(alpha, (num_views, 1)))
    g_fused = T.weighted_sum(alpha, view_feats)
    return FusionState(g, scores, alpha, f_weighted, g_fused)


def apply_view_weights(view_feats: Tensor, alpha: Tensor) -> FusionState:
    """Fuse with externally supplied weights (diagnostics and tests)."""
    num_views, _ = view_feats.shape
    g, _ = T.max_over_axis(view_feats, axis=0)
    f_weighted = T.mul(view_feats, T.reshape(alpha, (num_views, 1)))
    g_fused = T.weighted_sum(alpha, view_feats)
    return FusionState(g, None, alpha, f_weighted, g_fused)


def max_pool_state(view_feats: Tensor) -> FusionState:
    """Fusion with the layer disabled: plain channelwise max, no weights."""
    g, _ = T.max_over_axis(view_feats, axis=0)
    return FusionState(g, None, None, view_feats, g)


class AWV(Module):
    """Adjacent-view mixing followed by cosine attention fusion."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.mix = CircularConv1d(dim, rng)

    def forward(self, view_feats: Tensor) -> FusionState:
        return attention_weights(self.mix.forward(view_feats))
