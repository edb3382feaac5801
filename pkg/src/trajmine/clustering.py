"""Density clustering with a quantile-selected radius.

The radius comes from the empirical distribution of k-nearest-neighbor
distances (k = 4, query point excluded): by default all N*k distances are
pooled and a linear-interpolation quantile is taken; `knn_mode="kth"`
restricts the pool to each point's 4th-nearest distance.

Labeling is canonical and order-free: core points are found by counting
neighbors within epsilon (the point itself included), core components are
numbered by their smallest member, border points join the lowest-numbered
adjacent core component, and final ids are renumbered by smallest member.
Shuffling the input rows therefore permutes rows, never the partition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

from .extract import RepresentationSet
from .world import canonical_json

NOISE = -1

DEFAULT_MIN_SAMPLES = 4
DEFAULT_KNN_K = 4


def _pairwise_distances(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Euclidean distances in float64 for stable comparisons."""
    X = X.astype(np.float64, copy=False)
    Y = Y.astype(np.float64, copy=False)
    sq = (
        (X**2).sum(axis=1)[:, None]
        + (Y**2).sum(axis=1)[None, :]
        - 2.0 * (X @ Y.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def knn_distance_matrix(X: np.ndarray, k: int = DEFAULT_KNN_K) -> np.ndarray:
    """(N, k) ascending distances to each point's k nearest other points."""
    X = np.asarray(X)
    n = X.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k >= n:
        raise ValueError(f"k ({k}) must be smaller than the number of points ({n})")
    out = np.empty((n, k), dtype=np.float64)
    chunk = max(1, min(n, 2_000_000 // max(n, 1)))
    for start in range(0, n, chunk):
        block = _pairwise_distances(X[start : start + chunk], X)
        for row in range(block.shape[0]):
            block[row, start + row] = np.inf  # exclude the query point
        block.sort(axis=1)
        out[start : start + chunk] = block[:, :k]
    return out


def knn_distances(
    X: np.ndarray, k: int = DEFAULT_KNN_K, mode: str = "all"
) -> np.ndarray:
    """Flat distance pool for radius selection.

    mode "all" pools every one of the N*k values; mode "kth" keeps only
    each point's k-th nearest distance (N values).
    """
    matrix = knn_distance_matrix(X, k)
    if mode == "all":
        return matrix.ravel()
    if mode == "kth":
        return matrix[:, k - 1].copy()
    raise ValueError(f"unknown knn mode {mode!r}; expected 'all' or 'kth'")


def select_epsilon(distances: np.ndarray, q: float) -> float:
    """Linear-interpolation quantile of the pooled distances."""
    distances = np.asarray(distances, dtype=np.float64)
    if distances.size == 0:
        raise ValueError("cannot select a radius from an empty distance pool")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must be in (0, 1], got {q}")
    return float(np.quantile(distances, q, method="linear"))


def dbscan_labels(
    X: np.ndarray, epsilon: float, min_samples: int = DEFAULT_MIN_SAMPLES
) -> np.ndarray:
    """Canonical density-cluster labels for rows of X; NOISE is -1.

    A point is core when at least min_samples points (itself included) lie
    within epsilon. Ids are canonicalized by smallest member row index.
    """
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if min_samples < 1:
        raise ValueError(f"min_samples must be >= 1, got {min_samples}")
    n = X.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels

    neighbors: list[np.ndarray] = []
    chunk = max(1, min(n, 2_000_000 // max(n, 1)))
    for start in range(0, n, chunk):
        block = _pairwise_distances(X[start : start + chunk], X)
        for row in range(block.shape[0]):
            neighbors.append(np.flatnonzero(block[row] <= epsilon))
    core = np.array([len(nb) >= min_samples for nb in neighbors])

    # Components over core points, explored in ascending index order so the
    # provisional numbering is already canonical.
    comp = np.full(n, -1, dtype=np.int64)
    n_comp = 0
    for i in range(n):
        if not core[i] or comp[i] != -1:
            continue
        comp[i] = n_comp
        stack = [i]
        while stack:
            cur = stack.pop()
            for j in neighbors[cur]:
                if core[j] and comp[j] == -1:
                    comp[j] = n_comp
                    stack.append(j)
        n_comp += 1
    labels[core] = comp[core]

    # Border points: any non-core point within epsilon of a core point
    # joins the lowest-numbered adjacent component.
    for i in range(n):
        if core[i]:
            continue
        adjacent = [comp[j] for j in neighbors[i] if core[j]]
        if adjacent:
            labels[i] = min(adjacent)

    # Renumber by smallest member index (border points can change minima).
    order: dict[int, int] = {}
    for i in range(n):
        if labels[i] != NOISE and labels[i] not in order:
            order[labels[i]] = len(order)
    remap = np.array(
        [order.get(c, NOISE) for c in range(n_comp)] + [NOISE], dtype=np.int64
    )
    return np.where(labels == NOISE, NOISE, remap[labels])


@dataclass
class ClusterAssignment:
    """Cluster labels over (player_id, day) keys with the radius metadata."""

    labels: dict[tuple[int, int], int]
    epsilon: float
    min_samples: int
    q: float | None = None

    def clusters(self) -> dict[int, list[tuple[int, int]]]:
        out: dict[int, list[tuple[int, int]]] = {}
        for key in sorted(self.labels):
            label = self.labels[key]
            if label != NOISE:
                out.setdefault(label, []).append(key)
        return dict(sorted(out.items()))

    def noise(self) -> list[tuple[int, int]]:
        return sorted(k for k, v in self.labels.items() if v == NOISE)

    def detecting_count(self) -> int:
        """Player-days assigned to any non-noise cluster."""
        return sum(1 for v in self.labels.values() if v != NOISE)

    def to_json(self) -> dict:
        return {
            "q": self.q,
            "epsilon": self.epsilon,
            "min_samples": self.min_samples,
            "clusters": [
                {"id": cid, "members": [list(k) for k in members]}
                for cid, members in self.clusters().items()
            ],
            "noise": [list(k) for k in self.noise()],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ClusterAssignment":
        labels: dict[tuple[int, int], int] = {}
        for entry in data["clusters"]:
            for pid, day in entry["members"]:
                labels[(int(pid), int(day))] = int(entry["id"])
        for pid, day in data["noise"]:
            labels[(int(pid), int(day))] = NOISE
        return cls(
            labels=labels,
            epsilon=float(data["epsilon"]),
            min_samples=int(data["min_samples"]),
            q=None if data.get("q") is None else float(data["q"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(canonical_json(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "ClusterAssignment":
        return cls.from_json(json.loads(Path(path).read_text()))


def cluster_representations(
    reps: RepresentationSet,
    epsilon: float,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    q: float | None = None,
) -> ClusterAssignment:
    """Label a representation set; ids are canonical by smallest member key."""
    raw = dbscan_labels(reps.vectors, epsilon, min_samples)
    # reps.keys are sorted, so index-canonical numbering is key-canonical.
    labels = {key: int(raw[i]) for i, key in enumerate(reps.keys)}
    return ClusterAssignment(
        labels=labels, epsilon=float(epsilon), min_samples=min_samples, q=q
    )


def cluster_at_quantile(
    reps: RepresentationSet,
    q: float,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    knn_k: int = DEFAULT_KNN_K,
    knn_mode: str = "all",
) -> ClusterAssignment:
    """Radius selection plus clustering in one step."""
    epsilon = select_epsilon(knn_distances(reps.vectors, knn_k, knn_mode), q)
    return cluster_representations(reps, epsilon, min_samples, q=q)


class QuantileDBSCAN(BaseEstimator, ClusterMixin):
    """Estimator shell: quantile radius selection + canonical DBSCAN.

    Attributes after fit: labels_, epsilon_, knn_pool_.
    """

    def __init__(
        self,
        q: float = 0.05,
        min_samples: int = DEFAULT_MIN_SAMPLES,
        knn_k: int = DEFAULT_KNN_K,
        knn_mode: str = "all",
    ):
        self.q = q
        self.min_samples = min_samples
        self.knn_k = knn_k
        self.knn_mode = knn_mode

    def fit(self, X, y=None) -> "QuantileDBSCAN":
        X = check_array(X, dtype=np.float64)
        self.knn_pool_ = knn_distances(X, self.knn_k, self.knn_mode)
        self.epsilon_ = select_epsilon(self.knn_pool_, self.q)
        self.labels_ = dbscan_labels(X, self.epsilon_, self.min_samples)
        return self
