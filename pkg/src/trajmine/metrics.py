"""Cluster-quality metrics: windowed cell overlap and access homogeneity.

The window overlap statistic averages, over 95 fixed 30-minute windows
(starts 1, 16, ..., 1411), the Jaccard similarity of the cell sets two
players visited inside the window. Offline minutes contribute nothing and
a window where both sets are empty scores 0.

Positive pairs couple each clustered player-day with its representation-
nearest same-cluster partner; negative pairs draw a uniform member of a
different cluster (noise excluded). Access homogeneity is the mean, over
clusters, of the number of connected components the members' access nodes
form in the device-sharing graph; 1.0 means every cluster is covered by a
single shared-access component.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .clustering import NOISE, ClusterAssignment
from .extract import RepresentationSet
from .simulate import AccessInfoGraph, PlayerProfile
from .world import OFFLINE

WINDOW_MINUTES = 30
WINDOW_STRIDE = 15
WINDOW_STARTS = tuple(range(1, 1440 - WINDOW_MINUTES + 2, WINDOW_STRIDE))

Key = tuple[int, int]


def time_jaccard(cells_a: np.ndarray, cells_b: np.ndarray) -> float:
    """Mean windowed Jaccard overlap of two per-minute cell-key arrays.

    Inputs are length-1440 arrays of packed cell keys with OFFLINE (-1) in
    offline slots. The two counter dicts are maintained incrementally as
    the window slides.
    """
    a = np.asarray(cells_a)
    b = np.asarray(cells_b)
    if a.shape != (1440,) or b.shape != (1440,):
        raise ValueError(
            f"expected two length-1440 minute arrays, got {a.shape} and {b.shape}"
        )

    def add(counts: dict[int, int], values: np.ndarray) -> None:
        for v in values:
            if v != OFFLINE:
                counts[int(v)] = counts.get(int(v), 0) + 1

    def drop(counts: dict[int, int], values: np.ndarray) -> None:
        for v in values:
            if v != OFFLINE:
                left = counts[int(v)] - 1
                if left:
                    counts[int(v)] = left
                else:
                    del counts[int(v)]

    count_a: dict[int, int] = {}
    count_b: dict[int, int] = {}
    add(count_a, a[0:WINDOW_MINUTES])
    add(count_b, b[0:WINDOW_MINUTES])
    total = 0.0
    for w, start in enumerate(WINDOW_STARTS):
        if w > 0:
            lo = WINDOW_STARTS[w - 1] - 1
            add(count_a, a[lo + WINDOW_MINUTES : start - 1 + WINDOW_MINUTES])
            add(count_b, b[lo + WINDOW_MINUTES : start - 1 + WINDOW_MINUTES])
            drop(count_a, a[lo : start - 1])
            drop(count_b, b[lo : start - 1])
        inter = sum(1 for key in count_a if key in count_b)
        union = len(count_a) + len(count_b) - inter
        if union:
            total += inter / union
    return total / len(WINDOW_STARTS)


@dataclass
class PairSet:
    pos: list[tuple[Key, Key]]
    neg: list[tuple[Key, Key]]


def select_pairs(
    assignment: ClusterAssignment,
    reps: RepresentationSet,
    rng: np.random.Generator,
) -> PairSet:
    """Positive and negative evaluation pairs for every clustered key.

    The positive partner is the representation-nearest other member of the
    key's cluster (ties break toward the smaller key). With fewer than two
    clusters no negatives exist; a warning is emitted and the negative
    list stays empty.
    """
    clusters = assignment.clusters()
    pos: list[tuple[Key, Key]] = []
    neg: list[tuple[Key, Key]] = []
    others_cache: dict[int, list[Key]] = {}
    if len(clusters) < 2:
        warnings.warn(
            "fewer than two clusters: negative pairs cannot be drawn",
            stacklevel=2,
        )
    else:
        all_members = [k for members in clusters.values() for k in members]
        for cid, members in clusters.items():
            member_set = set(members)
            others_cache[cid] = sorted(
                k for k in all_members if k not in member_set
            )
    for cid, members in clusters.items():
        if len(members) < 2:
            continue
        idx = [reps.index_of(k) for k in members]
        vectors = reps.vectors[idx].astype(np.float64)
        for i, key in enumerate(members):
            deltas = vectors - vectors[i]
            dists = np.sqrt((deltas**2).sum(axis=1))
            dists[i] = np.inf
            best = float(dists.min())
            partner = min(
                members[j] for j in range(len(members)) if dists[j] == best
            )
            pos.append((key, partner))
            others = others_cache.get(cid)
            if others:
                neg.append((key, others[int(rng.integers(0, len(others)))]))
    return PairSet(pos=pos, neg=neg)


def pair_overlaps(
    pairs: Sequence[tuple[Key, Key]], cells: Mapping[Key, np.ndarray]
) -> list[float]:
    return [time_jaccard(cells[a], cells[b]) for a, b in pairs]


def contextual_similarity(
    pair_set: PairSet, cells: Mapping[Key, np.ndarray]
) -> tuple[float | None, float | None]:
    """(positive mean, negative mean) windowed overlap over the pair set."""
    pos = pair_overlaps(pair_set.pos, cells)
    neg = pair_overlaps(pair_set.neg, cells)
    pos_mean = float(np.mean(pos)) if pos else None
    neg_mean = float(np.mean(neg)) if neg else None
    return pos_mean, neg_mean


def cluster_access_components(
    members: Sequence[Key],
    access: AccessInfoGraph,
    node_of_player: Mapping[int, int],
) -> int:
    nodes = set()
    for pid, _day in members:
        if pid not in node_of_player:
            raise ValueError(f"player {pid} has no access node")
        nodes.add(node_of_player[pid])
    return access.component_count(nodes)


def access_homogeneity(
    assignment: ClusterAssignment,
    access: AccessInfoGraph,
    profiles: Sequence[PlayerProfile],
) -> float | None:
    """Mean connected-component count of member access nodes per cluster."""
    clusters = assignment.clusters()
    if not clusters:
        return None
    node_of_player = {p.player_id: p.access_node for p in profiles}
    counts = [
        cluster_access_components(members, access, node_of_player)
        for members in clusters.values()
    ]
    return float(np.mean(counts))


def metrics_report(
    assignment: ClusterAssignment,
    reps: RepresentationSet,
    cells: Mapping[Key, np.ndarray],
    access: AccessInfoGraph,
    profiles: Sequence[PlayerProfile],
    seed: int = 0,
) -> dict:
    """Full evaluation payload for one cluster assignment."""
    rng = np.random.default_rng([seed, 29])
    pair_set = select_pairs(assignment, reps, rng)
    pos_mean, neg_mean = contextual_similarity(pair_set, cells)
    node_of_player = {p.player_id: p.access_node for p in profiles}
    pos_by_key = {a: (b, time_jaccard(cells[a], cells[b])) for a, b in pair_set.pos}

    per_cluster = []
    for cid, members in assignment.clusters().items():
        overlaps = [pos_by_key[k][1] for k in members if k in pos_by_key]
        per_cluster.append(
            {
                "id": cid,
                "size": len(members),
                "members": [list(k) for k in members],
                "access_components": cluster_access_components(
                    members, access, node_of_player
                ),
                "pos_jaccard_mean": float(np.mean(overlaps)) if overlaps else None,
                "pairs": [
                    {
                        "key": list(k),
                        "partner": list(pos_by_key[k][0]),
                        "jaccard": pos_by_key[k][1],
                    }
                    for k in members
                    if k in pos_by_key
                ],
            }
        )
    return {
        "q": assignment.q,
        "epsilon": assignment.epsilon,
        "pos_mean": pos_mean,
        "neg_mean": neg_mean,
        "access_homogeneity": access_homogeneity(assignment, access, profiles),
        "detecting_count": assignment.detecting_count(),
        "n_clusters": len(assignment.clusters()),
        "per_cluster": per_cluster,
    }
