"""Discrimination loss: weighted sum of the model loss and view losses.

The model loss is cross-entropy of the fusion classifier on g'.  Each
weighted view feature also passes through a shared specific classifier;
its per-view cross-entropies combine either uniformly (average view
loss) or with weights 2/N - alpha_j (weighted view loss), which spends
more effort on views the attention currently down-weights.  The weights
sum to 1 and may go negative; gradients flow through alpha.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor

VIEW_MODES = ("none", "avl", "wvl")


@dataclass
class LossConfig:
    beta: float = 0.5
    gamma: float = 0.5
    view_mode: str = "wvl"

    def __post_init__(self):
        if self.view_mode not in VIEW_MODES:
            raise ValueError(
                f"view_mode must be one of {VIEW_MODES}, got {self.view_mode!r}"
            )
        if self.beta < 0.0 or self.gamma < 0.0:
            raise ValueError(
                f"loss weights must be non-negative, got "
                f"beta={self.beta}, gamma={self.gamma}"
            )
        if self.beta + self.gamma <= 0.0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class LossBreakdown:
    total: Tensor                  # beta * model + gamma * views
    model_loss: Tensor
    view_loss: Optional[Tensor]
    per_view: Optional[Tensor]     # (N,) cross-entropy per view
    view_weights: Optional[np.ndarray]
    negative_weights: int


def discrimination_loss(fusion_logits: Tensor, view_logits: Optional[Tensor],
                        alpha: Optional[Tensor], label: int,
                        cfg: LossConfig) -> LossBreakdown:
    """Combine classifier outputs for one model into the training loss.

    ``alpha`` may be None (fusion by plain max); the weighted mode then
    degenerates to the uniform average.
    """
    model_loss = T.softmax_cross_entropy(fusion_logits, [label])
    if cfg.view_mode == "none":
        return LossBreakdown(
            total=T.scale(model_loss, cfg.beta),
            model_loss=model_loss,
            view_loss=None,
            per_view=None,
            view_weights=None,
            negative_weights=0,
        )
    num_views = view_logits.shape[0]
    per_view = T.softmax_cross_entropy_per_row(
        view_logits, np.full(num_views, label)
    )
    if cfg.view_mode == "avl" or alpha is None:
        view_loss = T.mean_over_axis(per_view, axis=0)
        weights = np.full(num_views, 1.0 / num_views)
    else:
        weight_vec = T.sub(Tensor(np.full(num_views, 2.0 / num_views)), alpha)
        view_loss = T.dot(weight_vec, per_view)
        weights = weight_vec.data.copy()
    total = T.add(T.scale(model_loss, cfg.beta), T.scale(view_loss, cfg.gamma))
    return LossBreakdown(
        total=total,
        model_loss=model_loss,
        view_loss=view_loss,
        per_view=per_view,
        view_weights=weights,
        negative_weights=int((weights < 0.0).sum()),
    )
