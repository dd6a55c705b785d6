"""Embedding-based feature deduplication and growth curves.

Valid features are embedded, L2-normalized, and clustered with DBSCAN
under cosine distance; the number of clusters (noise points counting
individually) is the unique-feature count. With the default min_pts=1
every point is core and DBSCAN reduces to connected components under
the eps threshold, the natural duplicate relation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .gateway.core import EmbeddingVector, Gateway
from .search.features import Feature

_NEIGHBOR_BLOCK = 1024


@dataclass
class EmbeddedFeature:
    feature: Feature
    vector: EmbeddingVector


@dataclass
class DedupConfig:
    eps: float = 0.2
    min_pts: int = 1
    metric: str = "cosine_distance"

    def __post_init__(self):
        if not 0 < self.eps < 2:
            raise ValueError("eps must be in (0, 2) for cosine distance on unit vectors")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.metric != "cosine_distance":
            raise ValueError(f"unsupported metric {self.metric!r}")


@dataclass
class DedupReport:
    total_valid: int
    unique_count: int
    cluster_labels: list[int]
    growth: list[tuple[int, int]] = field(default_factory=list)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("cannot normalize a zero vector")
    return matrix / norms


def embed_features(
    features: list[Feature], gateway: Gateway, model_id: str
) -> list[EmbeddedFeature]:
    """Embed "name: definition" texts; vectors come back L2-normalized."""
    if not features:
        return []
    raw = gateway.embed([f.text() for f in features], model_id)
    matrix = normalize_rows(np.asarray([v.values for v in raw], dtype=np.float64))
    return [
        EmbeddedFeature(feature=f, vector=EmbeddingVector(values=row.tolist(), model_id=model_id))
        for f, row in zip(features, matrix)
    ]


def _neighbor_lists(points: np.ndarray, eps: float) -> list[np.ndarray]:
    """Exact eps-neighborhoods (self included), computed in row blocks."""
    neighbors: list[np.ndarray] = []
    for start in range(0, len(points), _NEIGHBOR_BLOCK):
        block = points[start : start + _NEIGHBOR_BLOCK]
        distances = 1.0 - block @ points.T
        for row in distances:
            neighbors.append(np.flatnonzero(row <= eps))
    return neighbors


def dbscan(points: np.ndarray | list, config: DedupConfig) -> list[int]:
    """Standard DBSCAN under cosine distance on unit vectors.

    Core point: at least min_pts neighbors within eps, counting itself.
    Cluster labels are dense non-negative integers in first-seen order;
    noise is -1. Seeds are visited in index order and clusters grown
    breadth-first, so the labeling is deterministic.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array of row vectors")
    n = len(points)
    if n == 0:
        return []
    neighbors = _neighbor_lists(points, config.eps)
    core = [len(nb) >= config.min_pts for nb in neighbors]

    labels = [None] * n
    next_label = 0
    for seed in range(n):
        if labels[seed] is not None or not core[seed]:
            continue
        label = next_label
        next_label += 1
        labels[seed] = label
        queue = deque(int(j) for j in neighbors[seed])
        while queue:
            j = queue.popleft()
            if labels[j] is not None:
                continue
            labels[j] = label  # border points go to the first cluster reaching them
            if core[j]:
                queue.extend(int(k) for k in neighbors[j])
    return [-1 if lab is None else lab for lab in labels]


def count_unique(labels: list[int]) -> int:
    """Distinct clusters, with each noise point counting individually."""
    clusters = {lab for lab in labels if lab >= 0}
    noise = sum(1 for lab in labels if lab < 0)
    return len(clusters) + noise


def dedup_report(
    embedded: list[EmbeddedFeature], config: DedupConfig, stride: int | None = None
) -> DedupReport:
    """Cluster the full set and attach the growth curve."""
    labels = dbscan(_matrix(embedded), config) if embedded else []
    return DedupReport(
        total_valid=len(embedded),
        unique_count=count_unique(labels),
        cluster_labels=labels,
        growth=growth_curve(embedded, config, stride=stride),
    )


def _matrix(embedded: list[EmbeddedFeature]) -> np.ndarray:
    return np.asarray([ef.vector.values for ef in embedded], dtype=np.float64)


def growth_curve(
    embedded: list[EmbeddedFeature], config: DedupConfig, stride: int | None = None
) -> list[tuple[int, int]]:
    """(total, unique) at each sampled prefix of the feature stream.

    Prefixes are re-clustered from scratch every ``stride`` features
    (default total/200, at least 1); the final point always covers the
    full set.
    """
    total = len(embedded)
    if total == 0:
        return []
    if stride is None:
        stride = max(1, total // 200)
    matrix = _matrix(embedded)
    lengths = list(range(stride, total + 1, stride))
    if lengths[-1] != total:
        lengths.append(total)
    return [(length, count_unique(dbscan(matrix[:length], config))) for length in lengths]
