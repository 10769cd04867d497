"""Deterministic mini-batch training: Adam, gradient clipping, loss traces.

One training step forwards the whole batch jointly (batch-norm
statistics pool across its models), averages the per-model losses,
backpropagates once, clips each raw gradient component to
[-clip, clip], and applies a bias-corrected Adam update.
The epoch shuffle randomizes which models share a batch, but indices
within a batch are processed in sorted order, so a run is a pure
function of (data, parameters, config, seed) down to the last bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import tensor as T
from .backbone import ConfigError
from .checkpoint import save_checkpoint
from .model import PCNNModel
from .nn import BatchNorm

TRACE_COLUMNS = ("step", "epoch", "l_model", "l_views", "l_dis",
                 "neg_wvl_count")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip: float = 0.01
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.adam_beta1 < 1.0:
            raise ConfigError(f"adam_beta1 out of [0, 1): {self.adam_beta1}")
        if not 0.0 <= self.adam_beta2 < 1.0:
            raise ConfigError(f"adam_beta2 out of [0, 1): {self.adam_beta2}")
        if self.clip <= 0.0:
            raise ConfigError(f"clip must be positive, got {self.clip}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")


class Adam:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, named_params, cfg: TrainConfig):
        self.named_params = list(named_params)
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]
        self.t = 0

    def step(self):
        cfg = self.cfg
        self.t += 1
        for i, (name, p) in enumerate(self.named_params):
            g = p.grad
            if not np.isfinite(g).all():
                raise RuntimeError(
                    f"non-finite gradient in {name} at step {self.t}"
                )
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1 - cfg.adam_beta1) * g
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1 - cfg.adam_beta2) * g * g
            m_hat = self.m[i] / (1 - cfg.adam_beta1 ** self.t)
            v_hat = self.v[i] / (1 - cfg.adam_beta2 ** self.t)
            p.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def clip_gradients(named_params, clip: float):
    """Clamp every raw gradient component to [-clip, clip], in place."""
    for _, p in named_params:
        np.clip(p.grad, -clip, clip, out=p.grad)


@dataclass
class TraceRow:
    step: int
    epoch: int
    l_model: float
    l_views: float
    l_dis: float
    neg_wvl_count: int


@dataclass
class TrainTrace:
    rows: List[TraceRow] = field(default_factory=list)

    def add(self, row: TraceRow):
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError("trace steps must increase")
        self.rows.append(row)

    def epoch_mean(self, epoch: int) -> float:
        losses = [r.l_dis for r in self.rows if r.epoch == epoch]
        if not losses:
            raise ValueError(f"no trace rows for epoch {epoch}")
        return float(np.mean(losses))

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(TRACE_COLUMNS)
            for r in self.rows:
                writer.writerow([r.step, r.epoch, repr(r.l_model),
                                 repr(r.l_views), repr(r.l_dis),
                                 r.neg_wvl_count])


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        # composition is random, processing order canonical
        yield np.sort(order[start:start + batch_size])


def _state_arrays(net: PCNNModel):
    arrays = [p.data for _, p in net.named_params()]
    arrays += [buf for _, buf in net.named_buffers()]
    return arrays


def calibrate_norms(net: PCNNModel, views: np.ndarray):
    """Overwrite running norm statistics with whole-set statistics.

    Running averages blend statistics gathered under earlier weights.
    One no-grad train-mode pass over all models with momentum forced to
    1 replaces them with the exact population statistics of the current
    parameters, which is what eval-mode normalization should use.
    """
    norms = [m for m in net.modules() if isinstance(m, BatchNorm)]
    kept = [m.momentum for m in norms]
    for m in norms:
        m.momentum = 1.0
    try:
        with T.no_grad():
            net.forward_batch(views, train=True)
    finally:
        for m, momentum in zip(norms, kept):
            m.momentum = momentum


def train(views: np.ndarray, labels: np.ndarray, net: PCNNModel,
          cfg: TrainConfig,
          trace_path=None, final_path=None,
          best_path=None) -> TrainTrace:
    """Optimize ``net`` on (views, labels); returns the loss trace.

    Writes the trace as CSV and the final / best-epoch checkpoints when
    the corresponding paths are given.  Best means lowest epoch-mean
    training loss.  After the last epoch the running norm statistics
    are recalibrated over the whole training set (``calibrate_norms``);
    both checkpoints carry calibrated statistics.
    """
    views = np.asarray(views, dtype=np.float64)
    labels = np.asarray(labels)
    num_models = views.shape[0]
    if num_models == 0:
        raise ConfigError("training split is empty")
    if labels.shape != (num_models,):
        raise ConfigError(
            f"need one label per model, got {labels.shape} for {num_models}"
        )
    if int(labels.max()) >= net.cfg.num_classes:
        raise ConfigError(
            f"label {int(labels.max())} outside the classifier's "
            f"{net.cfg.num_classes} classes"
        )
    rng = np.random.default_rng([cfg.seed, 5741])
    params = net.named_params()
    adam = Adam(params, cfg)
    trace = TrainTrace()
    best_loss = np.inf
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(num_models)
        for batch in _batches(order, cfg.batch_size):
            net.zero_grad()
            results = net.forward_batch(views[batch], train=True)
            breakdowns = [
                net.loss(result, int(labels[i]))
                for result, i in zip(results, batch)
            ]
            total = breakdowns[0].total
            for b in breakdowns[1:]:
                total = T.add(total, b.total)
            batch_loss = T.scale(total, 1.0 / len(batch))
            batch_loss.backward()
            clip_gradients(params, cfg.clip)
            adam.step()
            step += 1
            trace.add(TraceRow(
                step=step,
                epoch=epoch,
                l_model=float(np.mean([b.model_loss.data
                                       for b in breakdowns])),
                l_views=float(np.mean([
                    b.view_loss.data if b.view_loss is not None else 0.0
                    for b in breakdowns
                ])),
                l_dis=float(batch_loss.data),
                neg_wvl_count=sum(b.negative_weights for b in breakdowns),
            ))
        epoch_loss = trace.epoch_mean(epoch)
        if best_path is not None and epoch_loss < best_loss:
            best_loss = epoch_loss
            best_state = [a.copy() for a in _state_arrays(net)]
    calibrate_norms(net, views)
    if trace_path is not None:
        trace.write_csv(trace_path)
    if final_path is not None:
        save_checkpoint(net, final_path)
    if best_path is not None:
        # the best-epoch snapshot gets the same calibration before it is
        # written; the net itself keeps the calibrated final state
        final_state = [a.copy() for a in _state_arrays(net)]
        for target, saved in zip(_state_arrays(net), best_state):
            target[...] = saved
        calibrate_norms(net, views)
        save_checkpoint(net, best_path)
        for target, saved in zip(_state_arrays(net), final_state):
            target[...] = saved
    return trace
