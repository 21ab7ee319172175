"""Graph clustering of feature-network nodes into convolutional windows.

Hard clusterers return a :class:`Partition`; fuzzy c-means returns a
:class:`SoftPartition`. All clusterers work on ``|W|`` since Ward, spectral
and modularity methods assume nonnegative similarities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import squareform

from .errors import (
    DegenerateEmbedding,
    DimensionMismatch,
    InvalidK,
    NonConvergence,
    NonConvergenceWarning,
)
from .laplacian import laplacian_matrix
from .network import DistanceMatrix, FeatureNetwork


def _relabel_first_seen(assign):
    assign = np.asarray(assign)
    _, first = np.unique(assign, return_index=True)
    order = assign[np.sort(first)]
    mapping = {old: new for new, old in enumerate(order)}
    return np.array([mapping[a] for a in assign], dtype=int)


@dataclass(frozen=True)
class Partition:
    """Hard assignment of ``p`` nodes to ``d`` clusters."""

    assign: np.ndarray
    d: int = None

    def __post_init__(self):
        a = np.array(self.assign, dtype=int, copy=True)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("assignment must be a non-empty 1-D array")
        d = int(a.max()) + 1 if self.d is None else int(self.d)
        if a.min() < 0 or a.max() >= d:
            raise ValueError(f"cluster ids must lie in [0, {d})")
        if np.unique(a).size != d:
            raise ValueError("every cluster id must be used at least once")
        a.setflags(write=False)
        object.__setattr__(self, "assign", a)
        object.__setattr__(self, "d", d)

    @property
    def p(self):
        return self.assign.size

    @classmethod
    def from_clusters(cls, clusters, p=None):
        p = sum(len(c) for c in clusters) if p is None else p
        a = -np.ones(p, dtype=int)
        for j, members in enumerate(clusters):
            if np.any(a[list(members)] >= 0):
                raise ValueError("clusters overlap")
            a[list(members)] = j
        if np.any(a < 0):
            raise ValueError("clusters do not cover every node")
        return cls(a, len(clusters))

    def clusters(self):
        return [np.flatnonzero(self.assign == j) for j in range(self.d)]

    def sizes(self):
        return np.bincount(self.assign, minlength=self.d)

    def canonical(self):
        """Same partition with labels renumbered by first appearance."""
        return Partition(_relabel_first_seen(self.assign), self.d)

    def membership(self):
        """Dense ``d x p`` 0/1 membership matrix."""
        U = np.zeros((self.d, self.p))
        U[self.assign, np.arange(self.p)] = 1.0
        return U

    def same_as(self, other):
        return np.array_equal(self.canonical().assign, other.canonical().assign)


@dataclass(frozen=True)
class SoftPartition:
    """Overlapping clusters given by a ``d x p`` membership matrix."""

    U: np.ndarray

    def __post_init__(self):
        U = np.array(self.U, dtype=float, copy=True)
        if U.ndim != 2:
            raise ValueError("membership matrix must be 2-D")
        if np.any(U < 0) or np.any(U > 1):
            raise ValueError("memberships must lie in [0, 1]")
        if np.any(np.abs(U.sum(axis=0) - 1.0) > 1e-9):
            raise ValueError("membership columns must sum to 1")
        if np.any(U.sum(axis=1) == 0):
            raise ValueError("a cluster has no members")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)

    @property
    def d(self):
        return self.U.shape[0]

    @property
    def p(self):
        return self.U.shape[1]

    def hard_labels(self):
        # np.argmax breaks ties toward the lower index
        return np.argmax(self.U, axis=0)

    def harden(self):
        """Argmax partition. Raises if some cluster wins no node."""
        return Partition(self.hard_labels(), self.d)

    def membership(self):
        return np.array(self.U)


# ---------------------------------------------------------------------------
# Ward


def network_dissimilarity(G: FeatureNetwork) -> DistanceMatrix:
    """``1 - |W|`` (weights rescaled into [0, 1] when they exceed 1)."""
    A = np.abs(G.W)
    scale = max(1.0, A.max(initial=0.0))
    D = 1.0 - A / scale
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D)


def _cut_merges(Z, p, k):
    parent = list(range(2 * p - 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for step in range(p - k):
        a, b = int(Z[step, 0]), int(Z[step, 1])
        new = p + step
        parent[find(a)] = new
        parent[find(b)] = new
    roots = np.array([find(i) for i in range(p)])
    return _relabel_first_seen(roots)


def ward_clusters(D, k) -> Partition:
    """Agglomerative Ward clustering cut at exactly ``k`` clusters.

    ``D`` is a dissimilarity matrix (or a :class:`FeatureNetwork`, converted
    with :func:`network_dissimilarity`).
    """
    if isinstance(D, FeatureNetwork):
        D = network_dissimilarity(D)
    elif not isinstance(D, DistanceMatrix):
        D = DistanceMatrix(D)
    p = D.p
    if not (1 <= k <= p):
        raise InvalidK(f"k={k} outside [1, {p}]")
    if k == p:
        return Partition(np.arange(p), p)
    if k == 1:
        return Partition(np.zeros(p, dtype=int), 1)
    Z = linkage(squareform(D.D, checks=False), method="ward")
    return Partition(_cut_merges(Z, p, k), k)


def ward_objective(D, partition):
    """Within-cluster sum of squares implied by a dissimilarity matrix."""
    D = D.D if isinstance(D, DistanceMatrix) else np.asarray(D)
    total = 0.0
    for members in partition.clusters():
        sub = D[np.ix_(members, members)]
        total += (sub ** 2).sum() / (2.0 * len(members))
    return total


# ---------------------------------------------------------------------------
# spectral embedding, k-means, fuzzy c-means


def spectral_embedding(G: FeatureNetwork, k):
    """Rows of the ``k`` bottom eigenvectors of the standard Laplacian of
    ``|W|``, normalised to unit length."""
    if not (2 <= k <= G.p):
        raise InvalidK(f"k={k} outside [2, {G.p}]")
    L = laplacian_matrix(np.abs(G.W), "standard")
    _, V = np.linalg.eigh(L)
    E = V[:, :k].copy()
    norms = np.linalg.norm(E, axis=1)
    if np.any(norms < 1e-10):
        raise DegenerateEmbedding("embedding has rows of zero length")
    E /= norms[:, None]
    return E


def _farthest_first(X, k, first):
    centers = [first]
    dist = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[centers].copy()


def _lloyd(X, C, max_iter=300):
    k = C.shape[0]
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        for j in range(k):
            if not np.any(new == j):
                # reseed an empty cluster at the point farthest from its centroid
                far = int(np.argmax(d2[np.arange(len(X)), new]))
                new[far] = j
                d2[far, :] = np.inf
                d2[far, j] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
    inertia = float(((X - C[labels]) ** 2).sum())
    return labels, C, inertia


def kmeans(X, k, seed=0, restarts=20, max_iter=300):
    """Lloyd k-means with farthest-first seeding.

    Each restart draws its first center from a seeded generator; the run with
    the smallest inertia wins (earliest run on ties).

    Returns
    -------
    labels : ndarray of int, relabelled by first appearance
    centers : ndarray, shape (k, dim)
    inertia : float
    """
    X = np.asarray(X, dtype=float)
    if not (1 <= k <= X.shape[0]):
        raise InvalidK(f"k={k} outside [1, {X.shape[0]}]")
    rng = np.random.default_rng(seed)
    firsts = rng.integers(0, X.shape[0], size=restarts)
    best = None
    for first in firsts:
        labels, C, inertia = _lloyd(X, _farthest_first(X, k, int(first)), max_iter)
        if best is None or inertia < best[2]:
            best = (labels, C, inertia)
    labels, C, inertia = best
    _, first_idx = np.unique(labels, return_index=True)
    order = labels[np.sort(first_idx)]
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    return relabel[labels], C[order], inertia


def spectral_clusters(G: FeatureNetwork, k, seed=0, restarts=20) -> Partition:
    E = spectral_embedding(G, k)
    if np.unique(np.round(E, 12), axis=0).shape[0] < k:
        raise DegenerateEmbedding(f"embedding has fewer than {k} distinct points")
    labels, _, _ = kmeans(E, k, seed=seed, restarts=restarts)
    return Partition(labels, k)


def fcm_memberships(X, C, m):
    """Fuzzy c-means membership matrix (``k x n``) for fixed centroids.

    A point that coincides with one or more centroids is shared equally among
    those centroids and gets zero membership elsewhere.
    """
    d = np.sqrt(((X[None, :, :] - C[:, None, :]) ** 2).sum(axis=2))
    zero = d <= 1e-14
    U = np.empty_like(d)
    hit = zero.any(axis=0)
    if np.any(~hit):
        dd = d[:, ~hit]
        ratio = (dd[:, None, :] / dd[None, :, :]) ** (2.0 / (m - 1.0))
        U[:, ~hit] = 1.0 / ratio.sum(axis=1)
    if np.any(hit):
        z = zero[:, hit].astype(float)
        U[:, hit] = z / z.sum(axis=0)
    return U / U.sum(axis=0)


def fuzzy_cmeans(G: FeatureNetwork, k, m=2.0, seed=0, tol=1e-6, max_iter=300,
                 strict=False) -> SoftPartition:
    """Fuzzy c-means on the spectral embedding of ``G``.

    Iteration starts from the k-means centroids of :func:`spectral_clusters`
    and stops once the largest membership change drops below ``tol``. When
    ``max_iter`` is hit a :class:`NonConvergenceWarning` carrying the final
    change is emitted, or :class:`NonConvergence` is raised if ``strict``.
    """
    if m <= 1:
        raise ValueError("fuzzifier m must exceed 1")
    E = spectral_embedding(G, k)
    _, C, _ = kmeans(E, k, seed=seed)
    U = fcm_memberships(E, C, m)
    delta = np.inf
    for _ in range(max_iter):
        Um = U ** m
        C = (Um @ E) / Um.sum(axis=1, keepdims=True)
        U_new = fcm_memberships(E, C, m)
        delta = float(np.abs(U_new - U).max())
        U = U_new
        if delta < tol:
            break
    else:
        msg = f"fuzzy c-means stopped after {max_iter} iterations, delta={delta:.3g}"
        if strict:
            raise NonConvergence(msg, delta)
        warnings.warn(msg, NonConvergenceWarning, stacklevel=2)
    return SoftPartition(U)


# ---------------------------------------------------------------------------
# modularity


def modularity(G, partition):
    """Newman modularity of a hard partition on ``|W|``."""
    A = np.abs(G.W if isinstance(G, FeatureNetwork) else np.asarray(G))
    labels = partition.assign if isinstance(partition, Partition) else np.asarray(partition)
    if labels.size != A.shape[0]:
        raise DimensionMismatch("partition size does not match the network")
    k = A.sum(axis=1)
    two_m = k.sum()
    if two_m == 0:
        return 0.0
    same = labels[:, None] == labels[None, :]
    B = A - np.outer(k, k) / two_m
    return float(B[same].sum() / two_m)


def _fine_tune(Bg, s):
    """Single-node moves that raise ``s^T Bg s``, best prefix per sweep."""
    diag = np.diag(Bg)
    while True:
        s_work = s.copy()
        x = Bg @ s_work
        moved = np.zeros(len(s), dtype=bool)
        gain_total, best_gain, best_state = 0.0, 0.0, None
        for _ in range(len(s)):
            gains = -4.0 * s_work * x + 4.0 * diag
            gains[moved] = -np.inf
            i = int(np.argmax(gains))
            gain_total += gains[i]
            x -= 2.0 * s_work[i] * Bg[:, i]
            s_work[i] = -s_work[i]
            moved[i] = True
            if gain_total > best_gain + 1e-12:
                best_gain, best_state = gain_total, s_work.copy()
        if best_state is None:
            return s
        s = best_state


def _bisect(B, group, two_m):
    Bg = B[np.ix_(group, group)].copy()
    Bg[np.diag_indices_from(Bg)] -= Bg.sum(axis=1)
    lam, V = np.linalg.eigh(Bg)
    if lam[-1] <= 1e-10:
        return None
    v = V[:, -1]
    s = np.where(v >= 0, 1.0, -1.0)
    s = _fine_tune(Bg, s)
    dq = float(s @ Bg @ s) / (2.0 * two_m)
    if dq <= 1e-10 or abs(s.sum()) == len(s):
        return None
    return group[s > 0], group[s < 0]


def community_detect(G: FeatureNetwork) -> Partition:
    """Recursive leading-eigenvector modularity bisection.

    Connected components are split independently; a group is left whole once
    no bisection raises the modularity. The number of communities is
    therefore chosen by the data.
    """
    A = np.abs(G.W)
    k = A.sum(axis=1)
    two_m = k.sum()
    n_comp, comp = connected_components(A != 0, directed=False)
    pending = [np.flatnonzero(comp == c) for c in range(n_comp)]
    done = []
    if two_m > 0:
        B = A - np.outer(k, k) / two_m
    while pending:
        group = pending.pop(0)
        split = None if len(group) < 2 or two_m == 0 else _bisect(B, group, two_m)
        if split is None:
            done.append(group)
        else:
            pending.extend(split)
    labels = np.empty(G.p, dtype=int)
    for j, members in enumerate(sorted(done, key=lambda g: g.min())):
        labels[members] = j
    return Partition(labels, len(done))
