"""The assembled retrieval network.

One model forward: backbone (or stored patch features) -> optional patch
convolution -> per-view pooling -> fusion (adaptive view weighting or
plain max) -> fusion classifier, plus a specific classifier over the
weighted view features when view losses are enabled.  forward_batch runs
several models through the shared conv/norm stages together so training
batch-norm statistics pool over the whole mini-batch; neighbor graphs,
pooling, and fusion stay per model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .awv import AWV, FusionState, max_pool_state, pool_views
from .backbone import ConfigError, PatchBackbone, PatchSet, patches_from_pvf
from .losses import LossBreakdown, LossConfig, discrimination_loss
from .nn import Linear, Module
from .patchconv import PatchConvLayer
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_classes: int
    backbone_levels: int = 3
    backbone_dim: int = 32
    pvf_dim: int = 0          # nonzero: consume stored patch features instead
    patchconv: bool = True
    k: int = 12
    use_coords: bool = True
    leaky_slope: float = 0.2
    metric: str = "euclidean"
    awv: bool = True
    view_mode: str = "wvl"
    beta: float = 0.5
    gamma: float = 0.5

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")

    @property
    def patch_dim(self) -> int:
        return self.pvf_dim if self.pvf_dim else self.backbone_dim

    @property
    def fused_dim(self) -> int:
        if self.patchconv and self.use_coords:
            return self.patch_dim + 3
        return self.patch_dim


@dataclass
class ForwardResult:
    patches: PatchSet            # after patch convolution, if enabled
    view_feats: Tensor           # (N, fused_dim) pooled per view
    state: FusionState
    fusion_logits: Tensor        # (1, C)
    view_logits: Optional[Tensor]  # (N, C) when view losses are enabled

    @property
    def embedding(self) -> np.ndarray:
        return self.state.g_fused.data

    @property
    def predicted_class(self) -> int:
        return int(self.fusion_logits.data.argmax())


class PCNNModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        if not cfg.pvf_dim:
            self.backbone = PatchBackbone(cfg.backbone_levels, cfg.backbone_dim, rng,
                                          slope=cfg.leaky_slope)
        if cfg.patchconv:
            self.patchconv = PatchConvLayer(
                cfg.patch_dim, cfg.k, cfg.use_coords, rng,
                slope=cfg.leaky_slope, metric=cfg.metric,
            )
        if cfg.awv:
            self.awv = AWV(cfg.fused_dim, rng)
        self.classifier = Linear(cfg.fused_dim, cfg.num_classes, rng)
        if cfg.view_mode != "none":
            self.view_classifier = Linear(cfg.fused_dim, cfg.num_classes, rng)
        self.cfg = cfg
        self.loss_cfg = LossConfig(cfg.beta, cfg.gamma, cfg.view_mode)

    def forward_views(self, views, train: bool) -> ForwardResult:
        if self.cfg.pvf_dim:
            raise ConfigError("model was configured for stored patch features")
        return self._forward(self.backbone.forward(views, train), train)

    def forward_patches(self, features, train: bool) -> ForwardResult:
        patches = patches_from_pvf(features)
        if patches.layout[1] != self.cfg.patch_dim:
            raise ConfigError(
                f"patch dim {patches.layout[1]} does not match model "
                f"dim {self.cfg.patch_dim}"
            )
        return self._forward(patches, train)

    def forward_batch(self, views_batch, train: bool) -> list:
        """One ForwardResult per model, with pooled norm statistics."""
        if self.cfg.pvf_dim:
            raise ConfigError("model was configured for stored patch features")
        sets = self.backbone.forward_batch(views_batch, train)
        if self.cfg.patchconv:
            sets = self.patchconv.forward_batch(sets, train)
        return [self._fuse(ps) for ps in sets]

    def _forward(self, patches: PatchSet, train: bool) -> ForwardResult:
        if self.cfg.patchconv:
            patches = self.patchconv.forward(patches, train)
        return self._fuse(patches)

    def _fuse(self, patches: PatchSet) -> ForwardResult:
        view_feats = pool_views(patches.features, patches.layout)
        if self.cfg.awv:
            state = self.awv.forward(view_feats)
        else:
            state = max_pool_state(view_feats)
        fusion_logits = self.classifier.forward(
            T.reshape(state.g_fused, (1, self.cfg.fused_dim))
        )
        view_logits = None
        if self.cfg.view_mode != "none":
            view_logits = self.view_classifier.forward(state.f_weighted)
        return ForwardResult(patches, view_feats, state, fusion_logits, view_logits)

    def loss(self, result: ForwardResult, label: int) -> LossBreakdown:
        return discrimination_loss(
            result.fusion_logits, result.view_logits,
            result.state.alpha, label, self.loss_cfg,
        )
