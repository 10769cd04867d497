"""Embedding extraction, query ranking, and retrieval metrics.

Every test model serves once as a query against all remaining test
models.  Ranking sorts the gallery by embedding distance; the optional
rerank step partitions the list so that gallery models sharing the
query's predicted class come first, preserving distance order inside
each part.  Average precision is computed in exact rational arithmetic
and rounded once at the end, so equal rankings give equal scores on
every platform.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import List

import numpy as np

from . import tensor as T
from .formats import EmbeddingFile
from .model import PCNNModel

PR_LEVELS = 101


class ExcludedQuery(ValueError):
    """The query has no relevant gallery item; it cannot be scored."""


@dataclass
class RankedList:
    query_id: int
    gallery_ids: np.ndarray   # model ids, best match first
    distances: np.ndarray
    relevant: np.ndarray      # gallery label == query label


@dataclass
class RetrievalMetrics:
    map: float
    pr: np.ndarray            # precision at recall 0.00, 0.01, ..., 1.00
    queries: int              # queries that entered the mean
    excluded: int             # queries with no relevant gallery item


def embed(views: np.ndarray, labels: np.ndarray, model_ids: np.ndarray,
          net: PCNNModel) -> EmbeddingFile:
    """Eval-mode fusion features and predicted classes for each model."""
    embeddings = []
    predicted = []
    with T.no_grad():
        for i in range(views.shape[0]):
            result = net.forward_views(np.asarray(views[i], np.float64),
                                       train=False)
            embeddings.append(result.embedding)
            predicted.append(result.predicted_class)
    return EmbeddingFile(
        embeddings=np.asarray(embeddings, dtype=np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        model_ids=np.asarray(model_ids, dtype=np.int64),
        predicted=np.asarray(predicted, dtype=np.int64),
    )


def _distances(query: np.ndarray, gallery: np.ndarray, metric: str):
    query = query.astype(np.float64)
    gallery = gallery.astype(np.float64)
    if metric == "cosine":
        q_norm = max(float(np.linalg.norm(query)), 1e-8)
        g_norms = np.maximum(np.linalg.norm(gallery, axis=1), 1e-8)
        return 1.0 - (gallery @ query) / (g_norms * q_norm)
    if metric == "euclidean":
        return np.linalg.norm(gallery - query, axis=1)
    raise ValueError(f"unknown metric {metric!r}")


def rank(emb: EmbeddingFile, query_index: int, metric: str = "cosine",
         rerank: bool = False) -> RankedList:
    """Order all other models by distance to the query."""
    num_models = emb.embeddings.shape[0]
    gallery = np.setdiff1d(np.arange(num_models), [query_index])
    if gallery.size == 0:
        raise ValueError("gallery is empty")
    dist = _distances(emb.embeddings[query_index], emb.embeddings[gallery],
                      metric)
    order = np.argsort(dist, kind="stable")
    if rerank:
        same = (emb.predicted[gallery[order]]
                == emb.predicted[query_index])
        order = np.concatenate([order[same], order[~same]])
    picked = gallery[order]
    return RankedList(
        query_id=int(emb.model_ids[query_index]),
        gallery_ids=emb.model_ids[picked],
        distances=dist[order],
        relevant=(emb.labels[picked]
                  == emb.labels[query_index]).astype(np.int64),
    )


def average_precision(relevant) -> float:
    """Mean of precision at each relevant rank, exact.

    Precisions are ratios of small integers; summing them as rationals
    and rounding once keeps the result independent of gallery size.
    """
    relevant = np.asarray(relevant)
    total = int(relevant.sum())
    if total == 0:
        raise ExcludedQuery("no relevant gallery item")
    hits = 0
    acc = Fraction(0)
    for position, rel in enumerate(relevant, start=1):
        if rel:
            hits += 1
            acc += Fraction(hits, position)
    return float(acc / total)


def interpolated_precision(relevant) -> np.ndarray:
    """Precision at 101 recall levels; at level r, the maximum precision
    over all ranks whose recall reaches r."""
    relevant = np.asarray(relevant, dtype=np.int64)
    total = int(relevant.sum())
    if total == 0:
        raise ExcludedQuery("no relevant gallery item")
    hits = np.cumsum(relevant)
    ranks = np.arange(1, relevant.size + 1)
    precision = hits / ranks
    recall = hits / total
    best_ahead = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.linspace(0.0, 1.0, PR_LEVELS)
    # recall ends at exactly total/total == 1.0, so every level resolves
    idx = np.searchsorted(recall, levels, side="left")
    return best_ahead[idx]


def map_and_pr(emb: EmbeddingFile, metric: str = "cosine",
               rerank: bool = False) -> RetrievalMetrics:
    """Leave-one-out retrieval over the whole embedding set."""
    num_models = emb.embeddings.shape[0]
    if num_models < 2:
        raise ValueError(f"need at least 2 models, got {num_models}")
    ap_values = []
    pr_sum = np.zeros(PR_LEVELS)
    excluded = 0
    for query in range(num_models):
        ranked = rank(emb, query, metric, rerank)
        try:
            ap_values.append(average_precision(ranked.relevant))
        except ExcludedQuery:
            excluded += 1
            continue
        pr_sum += interpolated_precision(ranked.relevant)
    if not ap_values:
        raise ExcludedQuery("no query has a relevant gallery item")
    return RetrievalMetrics(
        map=float(np.mean(ap_values)),
        pr=pr_sum / len(ap_values),
        queries=len(ap_values),
        excluded=excluded,
    )


def write_ranking_csv(path, ranked_lists: List[RankedList]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["query_id", "rank", "gallery_id", "distance",
                         "relevant"])
        for ranked in ranked_lists:
            for position in range(ranked.gallery_ids.size):
                writer.writerow([
                    ranked.query_id,
                    position + 1,
                    ranked.gallery_ids[position],
                    repr(float(ranked.distances[position])),
                    ranked.relevant[position],
                ])


def write_pr_csv(path, pr: np.ndarray):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["recall", "precision"])
        for j, precision in enumerate(pr):
            writer.writerow([f"{j / 100:.2f}", repr(float(precision))])


def write_metrics_json(path, metrics: RetrievalMetrics):
    payload = {
        "map": metrics.map,
        "queries": metrics.queries,
        "excluded": metrics.excluded,
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
