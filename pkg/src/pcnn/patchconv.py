"""Patch convolution: edge features to k nearest patches, max-aggregated.

For each patch i, the k nearest patches across all views (by feature
distance) define edges.  Each edge carries (p_i, p_j - p_i) plus, when
coordinates are enabled, (c_i, c_j - c_i); a shared linear map, batch
norm, and LeakyReLU transform the edges, and a channelwise max over the
k neighbors produces the new patch feature.  With coordinates the patch
dimension grows from D to D + 3; without them (the edge-conv ablation)
it stays D.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import PatchSet
from .nn import BatchNorm, Module
from .tensor import Parameter, Tensor, _record_margin


@dataclass
class NeighborGraph:
    """indices[i] lists patch i's neighbors by ascending distance."""

    indices: np.ndarray  # (M, k) int64


def _pairwise_sq_euclidean(features: np.ndarray) -> np.ndarray:
    sq = (features * features).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (features @ features.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _pairwise_cosine_distance(features: np.ndarray) -> np.ndarray:
    norms = np.maximum(np.linalg.norm(features, axis=1), 1e-8)
    sims = (features @ features.T) / np.outer(norms, norms)
    return 1.0 - sims


def knn_graph(features: np.ndarray, k: int,
              metric: str = "euclidean") -> NeighborGraph:
    """k nearest neighbors of each patch, self excluded.

    Sorting is stable, so exact distance ties resolve toward the lower
    patch index.  Records the distance gap around the k-th neighbor as a
    kink margin: the selection is piecewise constant and a finite
    difference across a selection change would be invalid.
    """
    features = np.asarray(features, dtype=np.float64)
    m = features.shape[0]
    if not 1 <= k < m:
        raise ValueError(f"k must be in [1, {m - 1}], got {k}")
    if metric == "euclidean":
        dist = _pairwise_sq_euclidean(features)
    elif metric == "cosine":
        dist = _pairwise_cosine_distance(features)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    indices = order[:, :k]
    if k < m - 1:
        ranked = np.take_along_axis(dist, order[:, k - 1:k + 1], axis=1)
        _record_margin((ranked[:, 1] - ranked[:, 0]).min())
    return NeighborGraph(indices.astype(np.int64))


def edge_features(patches: PatchSet, graph: NeighborGraph,
                  use_coords: bool) -> Tensor:
    """Edge tensor (M*k, 2D) or (M*k, 2(D+3)) in neighbor-major order."""
    m, k = graph.indices.shape
    self_idx = np.repeat(np.arange(m), k)
    neighbor_idx = graph.indices.ravel()
    p_i = T.gather_rows(patches.features, self_idx)
    p_j = T.gather_rows(patches.features, neighbor_idx)
    parts = [p_i, T.sub(p_j, p_i)]
    if use_coords:
        c = patches.coords.astype(np.float64)
        parts.append(Tensor(c[self_idx]))
        parts.append(Tensor(c[neighbor_idx] - c[self_idx]))
    return T.concat(parts, axis=1)


class PatchConvLayer(Module):
    def __init__(self, dim: int, k: int, use_coords: bool,
                 rng: np.random.Generator, slope: float = 0.2,
                 metric: str = "euclidean"):
        in_width = 2 * (dim + 3) if use_coords else 2 * dim
        out_dim = dim + 3 if use_coords else dim
        # no bias before batch norm; it would be absorbed immediately
        self.w = Parameter(rng.normal(0.0, np.sqrt(2.0 / in_width),
                                      (in_width, out_dim)))
        self.bn = BatchNorm(out_dim)
        self.k = k
        self.use_coords = use_coords
        self.slope = slope
        self.metric = metric
        self.out_dim = out_dim

    def forward(self, patches: PatchSet, train: bool) -> PatchSet:
        return self.forward_batch([patches], train)[0]

    def _ordered_matmul(self, edges: Tensor) -> Tensor:
        """Edge transform with the rows multiplied in row-content order.

        BLAS may round the same row differently depending on where it
        sits in the operand, so multiplying in caller order would let the
        patch enumeration leak into the result.  Sorting rows by content
        fixes the operand bitwise -- ties are identical rows -- and the
        inverse gather restores the caller's order afterwards.
        """
        order = np.lexsort(edges.data.T)
        inverse = np.argsort(order)
        h = T.matmul(T.gather_rows(edges, order), self.w)
        return T.gather_rows(h, inverse)

    def forward_batch(self, patch_sets: list, train: bool) -> list:
        """Per-model patch sets; norm statistics pool over all edges.

        Neighbor graphs never cross models, only the batch norm sees the
        concatenated edge rows.  With a single model this reduces to the
        plain per-model forward.  Outside training the edge transform
        runs per model in row-content order, so the result is bitwise
        independent of patch enumeration and batch composition.
        """
        graphs = [knn_graph(ps.features.data, self.k, self.metric)
                  for ps in patch_sets]
        edge_list = [edge_features(ps, g, self.use_coords)
                     for ps, g in zip(patch_sets, graphs)]
        if train:
            edges = edge_list[0] if len(edge_list) == 1 else T.concat(edge_list)
            h = T.matmul(edges, self.w)
        else:
            per_model = [self._ordered_matmul(e) for e in edge_list]
            h = per_model[0] if len(per_model) == 1 else T.concat(per_model)
        h = self.bn.forward(h, train)
        h = T.leaky_relu(h, self.slope)
        outs = []
        offset = 0
        for ps in patch_sets:
            rows = ps.num_patches * self.k
            h_b = h if len(patch_sets) == 1 else T.gather_rows(
                h, np.arange(offset, offset + rows))
            offset += rows
            h_b = T.reshape(h_b, (ps.num_patches, self.k, self.out_dim))
            pooled, _ = T.max_over_axis(h_b, axis=1)
            grid, _, num_views = ps.layout
            outs.append(PatchSet(pooled, ps.coords,
                                 (grid, self.out_dim, num_views)))
        return outs
