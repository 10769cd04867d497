"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation used by the retrieval network lives here.
Tensors wrap contiguous numpy arrays; each op records its inputs and a
backward closure, so calling ``backward()`` on a scalar loss sweeps the
implicit tape in reverse creation order and accumulates gradients into
the leaves.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


_node_counter = itertools.count()
_grad_enabled = True

# When a list is installed here, ops with non-differentiable kinks
# (leaky_relu, max selections) append their distance to the nearest kink.
# Finite-difference checks use this to reject instances too close to a kink.
_margin_sink = None


@contextmanager
def no_grad():
    """Disable tape recording; forwards inside run graph-free."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def kink_margins():
    """Collect kink margins of every op run inside the block."""
    global _margin_sink
    prev = _margin_sink
    _margin_sink = margins = []
    try:
        yield margins
    finally:
        _margin_sink = prev


def _record_margin(value):
    if _margin_sink is not None:
        _margin_sink.append(float(value))


class Tensor:
    """A float64 array plus the recorded operation that produced it."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "tape_id")

    def __init__(self, data, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.tape_id = next(_node_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def validate(self):
        """Raise if any entry is NaN or infinite."""
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor contains non-finite values")
        return self

    def ancestors(self):
        """All tensors this one depends on, including itself."""
        seen = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen[id(node)] = node
            stack.extend(node.parents)
        return list(seen.values())

    def backward(self):
        """Reverse sweep from this tensor; gradients land in the leaves.

        Parameters accumulate into their persistent ``grad`` buffers;
        intermediate nodes get a fresh gradient each sweep.  Sweep order
        is descending creation id, which is a valid topological order
        because every op's inputs exist before its output.
        """
        nodes = self.ancestors()
        for node in nodes:
            if not isinstance(node, Parameter):
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + np.ones_like(self.data)
        nodes.sort(key=lambda n: n.tape_id, reverse=True)
        for node in nodes:
            if node.backward_fn is not None:
                node.backward_fn(node.grad)

    # Operator sugar; named functions below carry the real contracts.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, id={self.tape_id})"


class Parameter(Tensor):
    """Trainable leaf tensor with a persistent gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name or '?'}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _out(data, parents, backward_fn):
    if not _grad_enabled:
        return Tensor(data)
    return Tensor(data, parents, backward_fn)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and linear ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    return Tensor(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad -= _unbroadcast(g, b.shape)

    return Tensor(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        a.grad += _unbroadcast(g * b.data, a.shape)
        b.grad += _unbroadcast(g * a.data, b.shape)

    return Tensor(data, (a, b), backward)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    data = x.data * c
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        x.grad += g * c

    return Tensor(data, (x,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    return Tensor(data, (a, b), backward)


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: need equal-length vectors, got {a.shape} and {b.shape}")
    data = a.data @ b.data
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        a.grad += g * b.data
        b.grad += g * a.data

    return Tensor(data, (a, b), backward)


def weighted_sum(weights, vectors) -> Tensor:
    """Combine rows of ``vectors`` (N x D) with per-row ``weights`` (N,)."""
    weights, vectors = as_tensor(weights), as_tensor(vectors)
    if weights.ndim != 1 or vectors.ndim != 2 or weights.shape[0] != vectors.shape[0]:
        raise ShapeError(
            f"weighted_sum: incompatible shapes {weights.shape} and {vectors.shape}"
        )
    data = weights.data @ vectors.data
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        weights.grad += vectors.data @ g
        vectors.grad += np.outer(weights.data, g)

    return Tensor(data, (weights, vectors), backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        x.grad += g.reshape(x.shape)

    return Tensor(data, (x,), backward)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    data = np.ascontiguousarray(x.data.transpose(axes))
    inverse = np.argsort(axes)
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        x.grad += g.transpose(inverse)

    return Tensor(data, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _grad_enabled:
        return Tensor(data)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            t.grad += g[tuple(index)]

    return Tensor(data, tuple(tensors), backward)


def gather_rows(x, indices) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into the source."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows: need a 2-D tensor, got {x.shape}")
    indices = np.asarray(indices, dtype=np.intp).ravel()
    data = x.data[indices]
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        np.add.at(x.grad, indices, g)

    return Tensor(data, (x,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_over_axis(x, axis: int) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis)
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        x.grad += np.expand_dims(g, axis)

    return Tensor(data, (x,), backward)


def mean_over_axis(x, axis: int) -> Tensor:
    x = as_tensor(x)
    n = x.shape[axis]
    data = x.data.mean(axis=axis)
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        x.grad += np.expand_dims(g, axis) / n

    return Tensor(data, (x,), backward)


def max_over_axis(x, axis: int):
    """Max along an axis; returns (values, argmax indices).

    Backward routes the incoming gradient only to the argmax positions;
    ties break toward the lowest index.
    """
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ShapeError(f"max_over_axis: empty axis {axis} in shape {x.shape}")
    moved = np.moveaxis(x.data, axis, -1)
    argmax = moved.argmax(axis=-1)
    data = np.take_along_axis(moved, argmax[..., None], axis=-1)[..., 0]
    if _margin_sink is not None and x.shape[axis] > 1:
        gaps = data[..., None] - moved
        gaps = np.where(gaps == 0.0, np.inf, gaps)
        _record_margin(gaps.min())
    if not _grad_enabled:
        return Tensor(data), argmax

    def backward(g):
        routed = np.zeros_like(moved)
        np.put_along_axis(routed, argmax[..., None], g[..., None], axis=-1)
        x.grad += np.moveaxis(routed, -1, axis)

    return Tensor(data, (x,), backward), argmax


# ---------------------------------------------------------------------------
# nonlinearities and losses
# ---------------------------------------------------------------------------

def leaky_relu(x, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu: slope must be in (0, 1), got {slope}")
    x = as_tensor(x)
    positive = x.data > 0  # x == 0 takes the slope branch by convention
    data = np.where(positive, x.data, slope * x.data)
    if _margin_sink is not None and x.size:
        _record_margin(np.abs(x.data).min())
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        x.grad += g * np.where(positive, 1.0, slope)

    return Tensor(data, (x,), backward)


def softmax(x) -> Tensor:
    """Softmax of a 1-D tensor."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"softmax: need a 1-D tensor, got {x.shape}")
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    p = e / e.sum()
    if not _grad_enabled:
        return Tensor(p)

    def backward(g):
        x.grad += p * (g - (g * p).sum())

    return Tensor(p, (x,), backward)


def softmax_cross_entropy_per_row(logits, labels) -> Tensor:
    """Per-row -log softmax(logits)[label]; returns a length-B vector."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp).ravel()
    if logits.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross entropy: logits {logits.shape} vs {labels.shape[0]} labels"
        )
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"cross entropy: label out of range [0, {n_classes})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(labels.shape[0])
    data = log_z - shifted[rows, labels]
    if not _grad_enabled:
        return Tensor(data)
    probs = np.exp(shifted - log_z[:, None])

    def backward(g):
        gl = probs * g[:, None]
        gl[rows, labels] -= g
        logits.grad += gl

    return Tensor(data, (logits,), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy over the batch, computed with max-subtraction."""
    return mean_over_axis(softmax_cross_entropy_per_row(logits, labels), axis=0)


def cosine_similarity(a, b, eps: float = 1e-8) -> Tensor:
    """dot(a, b) / (max(|a|, eps) * max(|b|, eps)) for 1-D vectors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    da, db = max(na, eps), max(nb, eps)
    raw = float(a.data @ b.data)
    data = raw / (da * db)
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        ga = b.data / (da * db)
        gb = a.data / (da * db)
        if na > eps:
            ga = ga - (raw / (da * da * da * db)) * a.data
        if nb > eps:
            gb = gb - (raw / (da * db * db * db)) * b.data
        a.grad += g * ga
        b.grad += g * gb

    return Tensor(data, (a, b), backward)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batch_norm(x, gamma, beta, running_mean, running_var, train: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-column standardization of a (B, C) tensor with learned scale/shift.

    Train mode normalizes by batch statistics and updates the running
    arrays in place; eval mode normalizes by the running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2:
        raise ShapeError(f"batch_norm: need a (B, C) tensor, got {x.shape}")
    n = x.shape[0]
    if train:
        if n < 2:
            raise ShapeError(f"batch_norm: train mode needs B >= 2, got B={n}")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / (n - 1)
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    data = gamma.data * xhat + beta.data
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        gamma.grad += (g * xhat).sum(axis=0)
        beta.grad += g.sum(axis=0)
        if train:
            gx = g * gamma.data
            x.grad += inv_std * (
                gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0)
            )
        else:
            x.grad += g * gamma.data * inv_std

    return Tensor(data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv2d(x, w, b=None) -> Tensor:
    """3x3 convolution with stride 2 and zero padding 1 on (B, C, H, W)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: got input {x.shape} and kernel {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv2d: channel mismatch, input {x.shape} vs kernel {w.shape}"
        )
    batch, c_in, h, width = x.shape
    c_out = w.shape[0]
    h_out = (h + 2 - 3) // 2 + 1
    w_out = (width + 2 - 3) // 2 + 1
    padded = np.zeros((batch, c_in, h + 2, width + 2))
    padded[:, :, 1:-1, 1:-1] = x.data

    # cols[b, ci, tap, i, j] = padded[b, ci, 2*i + dy, 2*j + dx]
    cols = np.empty((batch, c_in, 9, h_out, w_out))
    for dy in range(3):
        for dx in range(3):
            cols[:, :, dy * 3 + dx] = padded[
                :, :, dy:dy + 2 * h_out - 1:2, dx:dx + 2 * w_out - 1:2
            ]
    flat_cols = cols.reshape(batch, c_in * 9, h_out * w_out)
    kernel = w.data.reshape(c_out, c_in * 9)
    data = (kernel[None] @ flat_cols).reshape(batch, c_out, h_out, w_out)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        data = data + b.data[None, :, None, None]
        parents.append(b)
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        g_flat = g.reshape(batch, c_out, h_out * w_out)
        w.grad += (
            (g_flat @ flat_cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        )
        if b is not None:
            b.grad += g.sum(axis=(0, 2, 3))
        g_cols = (kernel.T[None] @ g_flat).reshape(batch, c_in, 9, h_out, w_out)
        g_padded = np.zeros_like(padded)
        for dy in range(3):
            for dx in range(3):
                g_padded[
                    :, :, dy:dy + 2 * h_out - 1:2, dx:dx + 2 * w_out - 1:2
                ] += g_cols[:, :, dy * 3 + dx]
        x.grad += g_padded[:, :, 1:-1, 1:-1]

    return Tensor(data, tuple(parents), backward)


def avg_pool_2d(x, kernel: int) -> Tensor:
    """Non-overlapping kernel x kernel average pooling on (B, C, H, W)."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] % kernel or x.shape[3] % kernel:
        raise ShapeError(
            f"avg_pool_2d: shape {x.shape} not divisible by kernel {kernel}"
        )
    batch, c, h, w = x.shape
    blocks = x.data.reshape(batch, c, h // kernel, kernel, w // kernel, kernel)
    data = blocks.mean(axis=(3, 5))
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        spread = np.broadcast_to(
            g[:, :, :, None, :, None] / (kernel * kernel),
            (batch, c, h // kernel, kernel, w // kernel, kernel),
        )
        x.grad += spread.reshape(x.shape)

    return Tensor(data, (x,), backward)


def conv1d_circular(x, w, b) -> Tensor:
    """Kernel-3 convolution along axis 0 of (N, C) with circular padding.

    Tap t of ``w[c_out, c_in, t]`` multiplies x[(n + t - 1) mod N]; the
    sequence is treated as a ring, so output n mixes rows n-1, n, n+1.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 3 or w.shape[2] != 3:
        raise ShapeError(f"conv1d_circular: got input {x.shape}, kernel {w.shape}")
    if x.shape[0] < 3:
        raise ShapeError(f"conv1d_circular: need at least 3 rows, got {x.shape[0]}")
    if w.shape[1] != x.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(
            f"conv1d_circular: incompatible {x.shape}, {w.shape}, {b.shape}"
        )
    rolled = [np.roll(x.data, -(t - 1), axis=0) for t in range(3)]
    data = b.data + sum(rolled[t] @ w.data[:, :, t].T for t in range(3))
    if not _grad_enabled:
        return Tensor(data)

    def backward(g):
        b.grad += g.sum(axis=0)
        for t in range(3):
            w.grad[:, :, t] += g.T @ rolled[t]
            x.grad += np.roll(g @ w.data[:, :, t], t - 1, axis=0)

    return Tensor(data, (x, w, b), backward)
