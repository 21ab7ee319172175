"""Deep hierarchical feature networks.

Layer ``k+1`` has one node per cluster of layer ``k``; its weights are the
average cross-cluster weights of layer ``k``. Feature vectors travel up the
hierarchy by average pooling over the same clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Union

import numpy as np
import scipy.sparse as sp

from .clustering import (
    Partition,
    SoftPartition,
    community_detect,
    fuzzy_cmeans,
    network_dissimilarity,
    spectral_clusters,
    ward_clusters,
)
from .errors import DimensionMismatch, InvalidSizes, PartitionMismatch
from .network import FeatureNetwork

AnyPartition = Union[Partition, SoftPartition]


def _hard_labels(C):
    if isinstance(C, SoftPartition):
        return C.hard_labels(), C.d
    return C.assign, C.d


def coarsen_weights(G: FeatureNetwork, C: AnyPartition) -> FeatureNetwork:
    """Average cross-cluster weights.

    ``W'[i, j] = sum(W[s, t] for s in C_i for t in C_j) / (|C_i| |C_j|)`` for
    ``i != j`` and zero on the diagonal. Block sums are correctly rounded
    (``math.fsum``), so the result does not depend on node order. Soft
    partitions are hardened by argmax first; a cluster that wins no node gets
    zero weights.
    """
    if C.p != G.p:
        raise PartitionMismatch(f"partition covers {C.p} nodes, network has {G.p}")
    labels, d = _hard_labels(C)
    members = [np.flatnonzero(labels == j) for j in range(d)]
    W = G.W
    out = np.zeros((d, d))
    for i in range(d):
        if members[i].size == 0:
            continue
        rows = W[members[i]]
        for j in range(i + 1, d):
            if members[j].size == 0:
                continue
            total = math.fsum(rows[:, members[j]].ravel().tolist())
            out[i, j] = out[j, i] = total / (members[i].size * members[j].size)
    return FeatureNetwork(out, None, "coarsened")


def pooling_matrix(C: AnyPartition):
    """Sparse ``d x p`` matrix whose rows average over each cluster."""
    if isinstance(C, SoftPartition):
        U = C.U
        P = U / U.sum(axis=1, keepdims=True)
        return sp.csr_matrix(P)
    sizes = C.sizes().astype(float)
    data = 1.0 / sizes[C.assign]
    return sp.csr_matrix((data, (C.assign, np.arange(C.p))), shape=(C.d, C.p))


def average_pool(x, C: AnyPartition):
    """Cluster means of a feature vector (or of each row of a matrix).

    Hard partitions give plain means; soft partitions give membership-weighted
    means normalised by total membership. A row of a matrix pools to exactly
    the same bits as the row pooled on its own.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != C.p:
        raise DimensionMismatch(f"vector length {x.shape[-1]} != partition size {C.p}")
    P = pooling_matrix(C)
    if x.ndim == 1:
        return P @ x
    return np.ascontiguousarray((P @ x.T).T)


@dataclass
class ClustererSpec:
    """Which clusterer builds each layer, with its knobs."""

    method: str = "ward"
    seed: int = 0
    m: float = 2.0
    restarts: int = 20

    def __post_init__(self):
        if self.method not in ("ward", "spectral", "fuzzy", "community"):
            raise ValueError(f"unknown clusterer {self.method!r}")

    def cluster(self, G: FeatureNetwork, k) -> AnyPartition:
        if self.method == "ward":
            return ward_clusters(network_dissimilarity(G), k)
        if self.method == "spectral":
            return spectral_clusters(G, k, seed=self.seed, restarts=self.restarts)
        if self.method == "fuzzy":
            return fuzzy_cmeans(G, k, m=self.m, seed=self.seed)
        return community_detect(G)


@dataclass
class HierarchicalNetwork:
    layers: List[FeatureNetwork]
    partitions: List[AnyPartition] = field(default_factory=list)

    def __post_init__(self):
        if len(self.layers) != len(self.partitions) + 1:
            raise ValueError("need exactly one more layer than partitions")
        for k, C in enumerate(self.partitions):
            if C.p != self.layers[k].p or C.d != self.layers[k + 1].p:
                raise PartitionMismatch(f"partition {k} does not link layers {k} and {k + 1}")

    @property
    def depth(self):
        return len(self.partitions)

    @property
    def sizes(self):
        return [G.p for G in self.layers[1:]]


def build_hierarchy(G0: FeatureNetwork, sizes, clusterer=None) -> HierarchicalNetwork:
    """Cluster and coarsen repeatedly, producing layers of ``sizes`` nodes.

    ``sizes`` must satisfy ``p >= d_1 > d_2 > ... > d_K >= 1``. The community
    clusterer ignores the requested size and picks its own.
    """
    clusterer = clusterer or ClustererSpec()
    if isinstance(clusterer, str):
        clusterer = ClustererSpec(method=clusterer)
    sizes = [int(s) for s in sizes]
    prev = G0.p
    for i, d in enumerate(sizes):
        if d < 1 or d > prev or (i > 0 and d == prev):
            raise InvalidSizes(f"layer sizes must satisfy p >= d_1 > ... >= 1, got {sizes}")
        prev = d
    layers, parts = [G0], []
    for d in sizes:
        G = layers[-1]
        if d == G.p:
            C = Partition(np.arange(G.p), G.p)
        elif d == 1:
            C = Partition(np.zeros(G.p, dtype=int), 1)
        else:
            C = clusterer.cluster(G, d)
        parts.append(C)
        layers.append(coarsen_weights(G, C))
    return HierarchicalNetwork(layers, parts)


def pool_dataset(X, hierarchy: HierarchicalNetwork, depth):
    """Average-pool every row of ``X`` through the first ``depth`` partitions."""
    if not (0 <= depth <= hierarchy.depth):
        raise ValueError(f"depth {depth} outside [0, {hierarchy.depth}]")
    X = np.array(X, dtype=float)
    for C in hierarchy.partitions[:depth]:
        X = average_pool(X, C)
    return X
