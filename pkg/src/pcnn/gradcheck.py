"""Central-difference gradient verification for every differentiable op.

Each registered check builds a random instance (an argument set plus a
scalar loss closure), runs the forward once to collect kink margins, and
rejects instances that sit within ``margin_min`` of a non-differentiable
point (LeakyReLU kinks, max or nearest-neighbor ties), resampling
deterministically from (seed, attempt).  Accepted instances compare the
analytic gradient of every parameter element against a two-sided finite
difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_err: float
    attempts: int
    n_elements: int


@dataclass
class SuiteRow:
    name: str
    max_rel_err: float
    seeds: int


# name -> builder(rng) -> (loss_fn, params); loss_fn replays the forward
# against the current param data, so finite differences can perturb in place.
CHECKS = {}


def register(name):
    def deco(fn):
        CHECKS[name] = fn
        return fn
    return deco


def _projector(rng, shape):
    """Scalarizer with weights fixed at build time.

    The weights come from the instance rng after all parameter draws, so
    they are independent of the parameters; a shared constant stream can
    collide with the instance stream and produce degenerate gradients.
    """
    c = Tensor(rng.normal(size=shape))
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1

    def project(out: Tensor) -> Tensor:
        flat = T.reshape(T.mul(out, c), (n,))
        return T.sum_over_axis(flat, 0)

    return project


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def numeric_grad(loss_fn, param: Parameter, h: float) -> np.ndarray:
    grad = np.zeros_like(param.data)
    flat = param.data.ravel()
    flat_grad = grad.ravel()
    with T.no_grad():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn().item()
            flat[i] = keep - h
            down = loss_fn().item()
            flat[i] = keep
            flat_grad[i] = (up - down) / (2.0 * h)
    return grad


def run_check(name: str, seed: int = 0, h: float = 1e-5,
              margin_min: float = 1e-3, grad_floor: float = 1e-5,
              max_attempts: int = 50) -> CheckResult:
    """Check one op on a well-conditioned random instance.

    Instances are rejected (and redrawn deterministically) when a kink
    sits within ``margin_min`` of an operating point, or when some
    gradient element is nonzero but below ``grad_floor``: the difference
    quotient carries ~1e-10 of cancellation noise, which no relative
    tolerance can absorb on a derivative that small.  Exact zeros stay;
    they difference to exactly zero.
    """
    builder = CHECKS[name]
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt, 883411])
        loss_fn, params = builder(rng)
        with T.kink_margins() as margins:
            out = loss_fn()
        if margins and min(margins) < margin_min:
            continue
        for p in params:
            p.zero_grad()
        out.backward()
        if any(
            np.any((np.abs(p.grad) > 0.0) & (np.abs(p.grad) < grad_floor))
            for p in params
        ):
            continue
        worst = 0.0
        n_elements = 0
        for p in params:
            analytic = p.grad.copy()
            numeric = numeric_grad(loss_fn, p, h)
            worst = max(worst, relative_error(analytic, numeric))
            n_elements += p.data.size
        return CheckResult(name, seed, worst, attempt + 1, n_elements)
    raise RuntimeError(
        f"gradcheck {name}: no well-conditioned instance "
        f"in {max_attempts} attempts for seed {seed}"
    )


def run_suite(names=None, n_seeds: int = 100, **kwargs) -> list:
    if names is None:
        names = list(CHECKS)
    rows = []
    for name in names:
        worst = 0.0
        for seed in range(n_seeds):
            result = run_check(name, seed=seed, **kwargs)
            worst = max(worst, result.max_rel_err)
        rows.append(SuiteRow(name, worst, n_seeds))
    return rows


# ---------------------------------------------------------------------------
# elementary op checks
# ---------------------------------------------------------------------------

_BROADCAST_SHAPES = [(3, 4), (1, 4), (3, 1), (4,), ()]


def _param(rng, shape) -> Parameter:
    return Parameter(rng.normal(size=shape))


@register("add")
def _check_add(rng):
    a = _param(rng, (3, 4))
    b = _param(rng, _BROADCAST_SHAPES[rng.integers(len(_BROADCAST_SHAPES))])
    proj = _projector(rng, (3, 4))
    return lambda: proj(T.add(a, b)), [a, b]


@register("sub")
def _check_sub(rng):
    a = _param(rng, (3, 4))
    b = _param(rng, _BROADCAST_SHAPES[rng.integers(len(_BROADCAST_SHAPES))])
    proj = _projector(rng, (3, 4))
    return lambda: proj(T.sub(a, b)), [a, b]


@register("mul")
def _check_mul(rng):
    a = _param(rng, (3, 4))
    b = _param(rng, _BROADCAST_SHAPES[rng.integers(len(_BROADCAST_SHAPES))])
    proj = _projector(rng, (3, 4))
    return lambda: proj(T.mul(a, b)), [a, b]


@register("scale")
def _check_scale(rng):
    a = _param(rng, (3, 4))
    c = float(rng.normal())
    proj = _projector(rng, (3, 4))
    return lambda: proj(T.scale(a, c)), [a]


@register("matmul")
def _check_matmul(rng):
    a = _param(rng, (3, 4))
    b = _param(rng, (4, 2))
    proj = _projector(rng, (3, 2))
    return lambda: proj(T.matmul(a, b)), [a, b]


@register("dot")
def _check_dot(rng):
    a = _param(rng, (5,))
    b = _param(rng, (5,))
    return lambda: T.dot(a, b), [a, b]


@register("weighted_sum")
def _check_weighted_sum(rng):
    w = _param(rng, (4,))
    v = _param(rng, (4, 3))
    proj = _projector(rng, (3,))
    return lambda: proj(T.weighted_sum(w, v)), [w, v]


@register("reshape")
def _check_reshape(rng):
    x = _param(rng, (2, 6))
    proj = _projector(rng, (3, 4))
    return lambda: proj(T.reshape(x, (3, 4))), [x]


@register("transpose")
def _check_transpose(rng):
    x = _param(rng, (2, 3, 4))
    axes = tuple(int(a) for a in rng.permutation(3))
    out_shape = tuple((2, 3, 4)[a] for a in axes)
    proj = _projector(rng, out_shape)
    return lambda: proj(T.transpose(x, axes)), [x]


@register("concat")
def _check_concat(rng):
    axis = int(rng.integers(2))
    if axis == 0:
        shapes, out_shape = [(2, 3), (1, 3), (4, 3)], (7, 3)
    else:
        shapes, out_shape = [(3, 2), (3, 1), (3, 4)], (3, 7)
    parts = [_param(rng, s) for s in shapes]
    proj = _projector(rng, out_shape)
    return lambda: proj(T.concat(parts, axis=axis)), parts


@register("gather_rows")
def _check_gather_rows(rng):
    x = _param(rng, (5, 3))
    indices = rng.integers(0, 5, size=7)  # repeats exercise scatter-add
    proj = _projector(rng, (7, 3))
    return lambda: proj(T.gather_rows(x, indices)), [x]


@register("sum_over_axis")
def _check_sum(rng):
    x = _param(rng, (3, 4, 2))
    axis = int(rng.integers(3))
    out_shape = tuple(d for i, d in enumerate((3, 4, 2)) if i != axis)
    proj = _projector(rng, out_shape)
    return lambda: proj(T.sum_over_axis(x, axis)), [x]


@register("mean_over_axis")
def _check_mean(rng):
    x = _param(rng, (3, 4, 2))
    axis = int(rng.integers(3))
    out_shape = tuple(d for i, d in enumerate((3, 4, 2)) if i != axis)
    proj = _projector(rng, out_shape)
    return lambda: proj(T.mean_over_axis(x, axis)), [x]


@register("max_over_axis")
def _check_max(rng):
    x = _param(rng, (3, 7))
    proj = _projector(rng, (3,))
    return lambda: proj(T.max_over_axis(x, axis=1)[0]), [x]


@register("leaky_relu")
def _check_leaky_relu(rng):
    x = _param(rng, (4, 5))
    proj = _projector(rng, (4, 5))
    return lambda: proj(T.leaky_relu(x, 0.2)), [x]


@register("softmax")
def _check_softmax(rng):
    x = _param(rng, (6,))
    proj = _projector(rng, (6,))
    return lambda: proj(T.softmax(x)), [x]


@register("softmax_cross_entropy")
def _check_sce(rng):
    logits = _param(rng, (4, 5))
    labels = rng.integers(0, 5, size=4)
    return lambda: T.softmax_cross_entropy(logits, labels), [logits]


@register("cosine_similarity")
def _check_cosine(rng):
    a = _param(rng, (6,))
    b = _param(rng, (6,))
    return lambda: T.cosine_similarity(a, b), [a, b]


@register("batch_norm_train")
def _check_bn_train(rng):
    x = _param(rng, (6, 3))
    gamma = Parameter(rng.normal(1.0, 0.1, 3))
    beta = _param(rng, (3,))
    rm, rv = np.zeros(3), np.ones(3)
    proj = _projector(rng, (6, 3))
    return (
        lambda: proj(T.batch_norm(x, gamma, beta, rm, rv, train=True)),
        [x, gamma, beta],
    )


@register("batch_norm_eval")
def _check_bn_eval(rng):
    x = _param(rng, (6, 3))
    gamma = Parameter(rng.normal(1.0, 0.1, 3))
    beta = _param(rng, (3,))
    rm = rng.normal(size=3)
    rv = np.abs(rng.normal(size=3)) + 0.5
    proj = _projector(rng, (6, 3))
    return (
        lambda: proj(T.batch_norm(x, gamma, beta, rm, rv, train=False)),
        [x, gamma, beta],
    )


@register("conv2d")
def _check_conv2d(rng):
    x = _param(rng, (2, 2, 6, 6))
    w = _param(rng, (3, 2, 3, 3))
    b = _param(rng, (3,))
    proj = _projector(rng, (2, 3, 3, 3))
    return lambda: proj(T.conv2d(x, w, b)), [x, w, b]


@register("avg_pool_2d")
def _check_avg_pool(rng):
    x = _param(rng, (2, 3, 4, 4))
    proj = _projector(rng, (2, 3, 2, 2))
    return lambda: proj(T.avg_pool_2d(x, 2)), [x]


@register("conv1d_circular")
def _check_conv1d(rng):
    x = _param(rng, (5, 3))
    w = _param(rng, (2, 3, 3))
    b = _param(rng, (2,))
    proj = _projector(rng, (5, 2))
    return lambda: proj(T.conv1d_circular(x, w, b)), [x, w, b]


# ---------------------------------------------------------------------------
# composite checks over the network blocks and the full loss
# ---------------------------------------------------------------------------

@register("backbone")
def _check_backbone(rng):
    from .backbone import PatchBackbone

    net = PatchBackbone(levels=2, dim=4, rng=rng)
    views = rng.normal(size=(4, 8, 8))
    proj = _projector(rng, (16, 4))
    return (
        lambda: proj(net.forward(views, train=True).features),
        net.params(),
    )


def _patchconv_builder(rng, use_coords: bool):
    from .backbone import PatchSet
    from .patchconv import PatchConvLayer

    n_views, grid, dim = 3, 2, 5
    m = n_views * grid * grid
    coords = np.array(
        [(x, y, z) for z in range(n_views) for x in range(grid) for y in range(grid)],
        dtype=np.int64,
    )
    features = _param(rng, (m, dim))
    layer = PatchConvLayer(dim=dim, k=3, use_coords=use_coords, rng=rng)
    out_dim = dim + 3 if use_coords else dim
    proj = _projector(rng, (m, out_dim))

    def loss_fn():
        out = layer.forward(
            PatchSet(features, coords, (grid, dim, n_views)), train=True
        )
        return proj(out.features)

    return loss_fn, [features] + layer.params()


@register("patchconv")
def _check_patchconv(rng):
    return _patchconv_builder(rng, use_coords=True)


@register("edgeconv")
def _check_edgeconv(rng):
    return _patchconv_builder(rng, use_coords=False)


@register("awv")
def _check_awv(rng):
    from .awv import attention_weights

    f = _param(rng, (5, 6))
    proj_g = _projector(rng, (6,))
    proj_f = _projector(rng, (5, 6))

    def loss_fn():
        state = attention_weights(f)
        return T.add(proj_g(state.g_fused), proj_f(state.f_weighted))

    return loss_fn, [f]


def _loss_builder(rng, view_mode: str):
    from .awv import attention_weights
    from .losses import LossConfig, discrimination_loss
    from .nn import Linear

    n_views, dim, n_classes = 4, 5, 3
    f = _param(rng, (n_views, dim))
    fusion_head = Linear(dim, n_classes, rng)
    specific_head = Linear(dim, n_classes, rng)
    label = int(rng.integers(n_classes))
    cfg = LossConfig(beta=0.5, gamma=0.5, view_mode=view_mode)

    def loss_fn():
        state = attention_weights(f)
        fusion_logits = fusion_head.forward(T.reshape(state.g_fused, (1, dim)))
        view_logits = specific_head.forward(state.f_weighted)
        return discrimination_loss(
            fusion_logits, view_logits, state.alpha, label, cfg
        ).total

    return loss_fn, [f] + fusion_head.params() + specific_head.params()


@register("loss_avl")
def _check_loss_avl(rng):
    return _loss_builder(rng, "avl")


@register("loss_wvl")
def _check_loss_wvl(rng):
    return _loss_builder(rng, "wvl")


@register("end_to_end")
def _check_end_to_end(rng):
    from .model import ModelConfig, PCNNModel

    cfg = ModelConfig(
        num_classes=3, backbone_levels=2, backbone_dim=4, k=2, view_mode="wvl"
    )
    net = PCNNModel(cfg, rng)
    views = rng.normal(size=(4, 8, 8))
    label = int(rng.integers(3))

    def loss_fn():
        result = net.forward_views(views, train=True)
        return net.loss(result, label).total

    return loss_fn, net.params()
