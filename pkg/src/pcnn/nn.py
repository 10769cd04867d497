"""Small layer library on top of the autodiff tensors.

Modules hold Parameters (trained) and numpy buffers (running statistics,
mutated in place).  ``named_params`` and ``named_buffers`` walk attributes
recursively and build slash-separated names, which double as checkpoint
keys, so attribute insertion order must be deterministic.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, batch_norm, conv1d_circular, conv2d, matmul, add


class Module:
    """Base class providing recursive parameter and buffer discovery."""

    def named_params(self):
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend((f"{name}/{k}", p) for k, p in value.named_params())
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(
                            (f"{name}/{i}/{k}", p) for k, p in item.named_params()
                        )
        return out

    def named_buffers(self):
        out = []
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend((f"{name}/{k}", b) for k, b in value.named_buffers())
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(
                            (f"{name}/{i}/{k}", b) for k, b in item.named_buffers()
                        )
        return out

    def modules(self):
        """This module and every nested one, in attribute order."""
        out = [self]
        for value in vars(self).values():
            if isinstance(value, Module):
                out.extend(value.modules())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        out.extend(item.modules())
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        std = np.sqrt(2.0 / in_dim)
        self.w = Parameter(rng.normal(0.0, std, (in_dim, out_dim)))
        self.b = Parameter(np.zeros(out_dim))

    def forward(self, x):
        return add(matmul(x, self.w), self.b)


class BatchNorm(Module):
    """Per-feature batch normalization over the leading axis of (B, C)."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, train: bool):
        return batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            train=train, momentum=self.momentum, eps=self.eps,
        )


class Conv2d(Module):
    """3x3 convolution, stride 2, zero padding 1.

    Pass bias=False when batch norm follows: the norm subtracts the
    per-channel mean, so a bias there is invisible to the loss and its
    gradient is structurally zero.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 bias: bool = True):
        std = np.sqrt(2.0 / (c_in * 9))
        self.w = Parameter(rng.normal(0.0, std, (c_out, c_in, 3, 3)))
        self.b = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x):
        return conv2d(x, self.w, self.b)


class CircularConv1d(Module):
    """Kernel-3 convolution over a ring of feature rows (N, C) -> (N, C).

    Initialized near the identity so the mixing starts as a pass-through
    and training learns how much neighboring rows should contribute.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        w = rng.normal(0.0, 0.01, (dim, dim, 3))
        w[:, :, 1] += np.eye(dim)
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(dim))

    def forward(self, x):
        return conv1d_circular(x, self.w, self.b)
