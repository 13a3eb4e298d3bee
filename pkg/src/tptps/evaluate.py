"""Text-to-image retrieval metrics: top-k accuracy and reID-style mAP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RetrievalIndex:
    gallery: np.ndarray  # (N, D) image features
    gallery_labels: np.ndarray  # (N,)
    queries: np.ndarray  # (Q, D) text features
    query_labels: np.ndarray  # (Q,)

    def __post_init__(self):
        self.gallery = np.asarray(self.gallery, dtype=float)
        self.queries = np.asarray(self.queries, dtype=float)
        self.gallery_labels = np.asarray(self.gallery_labels)
        self.query_labels = np.asarray(self.query_labels)
        if not (np.isfinite(self.gallery).all() and np.isfinite(self.queries).all()):
            raise ValueError("retrieval features must be finite")

    def similarity(self) -> np.ndarray:
        return _normalize(self.queries) @ _normalize(self.gallery).T

    def ranking(self) -> np.ndarray:
        """(Q, N) gallery indices, best first, ties by ascending index."""
        return np.argsort(-self.similarity(), axis=1, kind="stable")

    def matches(self) -> np.ndarray:
        """(Q, N) bool: does the gallery item at each rank share the query label."""
        ranks = self.ranking()
        return self.gallery_labels[ranks] == self.query_labels[:, None]


def _normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def rank(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Gallery indices by descending cosine similarity to ``query``."""
    gallery = np.asarray(gallery, dtype=float)
    if len(gallery) == 0:
        raise ValueError("empty gallery")
    sims = _normalize(gallery) @ _normalize(np.asarray(query, dtype=float))
    return np.argsort(-sims, kind="stable")


def topk_accuracy(index: RetrievalIndex, ks=(1, 5, 10)) -> dict[int, float]:
    n = len(index.gallery)
    for k in ks:
        if not 1 <= k <= n:
            raise ValueError(f"k={k} outside [1, {n}]")
    hits = index.matches()
    first = np.where(hits.any(axis=1), hits.argmax(axis=1), n)
    return {k: float(np.mean(first < k)) for k in ks}


def average_precision(hits: np.ndarray) -> float:
    """Interpolation-free AP of one ranked boolean relevance vector."""
    n_pos = int(hits.sum())
    if n_pos == 0:
        raise ValueError("query has no gallery positives")
    positions = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / positions))


def mean_ap(index: RetrievalIndex) -> float:
    return float(np.mean([average_precision(h) for h in index.matches()]))


def evaluate_index(index: RetrievalIndex, ks=(1, 5, 10)) -> dict[str, float]:
    ks = [k for k in ks if k <= len(index.gallery)]
    report = {f"R{k}": v for k, v in topk_accuracy(index, ks).items()}
    report["mAP"] = mean_ap(index)
    return report
