"""Feature network construction.

A feature network is a weighted undirected graph whose nodes are the columns
(features) of a data matrix.  Weights come from empirical correlations, from a
Gaussian kernel on mutual feature distances, or from a prior edge list.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import (
    ConstantColumn,
    DimensionMismatch,
    IndexOutOfRange,
    MalformedRow,
    NonPositiveSigma,
)

MODES = ("signed", "absolute", "kernel", "prior", "coarsened")


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureNetwork:
    """Symmetric weighted graph on ``p`` feature indices.

    Parameters
    ----------
    W : array_like, shape (p, p)
        Weight matrix. Must be symmetric with zero diagonal and finite entries.
    node_ids : sequence of str, optional
        External identifiers for the nodes (e.g. gene names).
    mode : str
        How the weights were produced. In ``"signed"`` and ``"absolute"``
        (correlation) modes all weights are bounded by 1 in magnitude.
    """

    W: np.ndarray
    node_ids: Optional[tuple] = None
    mode: str = "prior"

    def __post_init__(self):
        W = _frozen(self.W)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DimensionMismatch(f"weight matrix must be square, got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("weight matrix has non-finite entries")
        if not np.array_equal(W, W.T):
            raise ValueError("weight matrix is not symmetric")
        if np.any(np.diag(W) != 0):
            raise ValueError("weight matrix has a nonzero diagonal")
        if self.mode not in MODES:
            raise ValueError(f"unknown network mode {self.mode!r}")
        if self.mode in ("signed", "absolute") and np.abs(W).max(initial=0.0) > 1 + 1e-12:
            raise ValueError("correlation weights exceed 1 in magnitude")
        object.__setattr__(self, "W", W)
        if self.node_ids is not None:
            ids = tuple(str(i) for i in self.node_ids)
            if len(ids) != W.shape[0]:
                raise DimensionMismatch(
                    f"{len(ids)} node ids for {W.shape[0]} nodes")
            object.__setattr__(self, "node_ids", ids)

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def signed(self) -> bool:
        return bool(np.any(self.W < 0))

    def absolute(self) -> "FeatureNetwork":
        mode = "absolute" if self.mode == "signed" else self.mode
        return FeatureNetwork(np.abs(self.W), self.node_ids, mode)

    def subgraph(self, nodes) -> "FeatureNetwork":
        nodes = np.asarray(nodes, dtype=int)
        ids = None if self.node_ids is None else [self.node_ids[i] for i in nodes]
        return FeatureNetwork(self.W[np.ix_(nodes, nodes)], ids, self.mode)


@dataclass(frozen=True)
class DistanceMatrix:
    """Nonnegative symmetric matrix of mutual feature distances."""

    D: np.ndarray

    def __post_init__(self):
        D = _frozen(self.D)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise DimensionMismatch(f"distance matrix must be square, got {D.shape}")
        if not np.all(np.isfinite(D)) or np.any(D < 0):
            raise ValueError("distances must be finite and nonnegative")
        if not np.array_equal(D, D.T) or np.any(np.diag(D) != 0):
            raise ValueError("distance matrix must be symmetric with zero diagonal")
        object.__setattr__(self, "D", D)

    @property
    def p(self) -> int:
        return self.D.shape[0]


def _sparsify(W, threshold):
    if threshold is None or threshold <= 0:
        return W
    W = W.copy()
    W[np.abs(W) < threshold] = 0.0
    return W


def correlation_network(X, mode="signed", on_constant="raise", threshold=None,
                        node_ids=None) -> FeatureNetwork:
    """Pearson correlation network between the columns of ``X``.

    Parameters
    ----------
    X : array_like, shape (n, p)
    mode : {"signed", "absolute"}
    on_constant : {"raise", "isolate", "drop"}
        Policy for zero-variance columns. ``"isolate"`` keeps the node with no
        edges; ``"drop"`` removes it and records the surviving column indices
        as ``node_ids`` (unless ids were given, which are then subset).
    threshold : float, optional
        Zero out weights with magnitude below this value.
    """
    if mode not in ("signed", "absolute"):
        raise ValueError(f"mode must be 'signed' or 'absolute', got {mode!r}")
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch("data matrix must be 2-D")
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least two samples to estimate correlations")

    # two-pass: center first, then accumulate squares
    Xc = X - X.mean(axis=0)
    ss = np.einsum("ij,ij->j", Xc, Xc)
    scale = np.abs(X).max(axis=0)
    const = ss <= (n * np.finfo(float).eps * scale) ** 2
    if np.any(const):
        if on_constant == "raise":
            raise ConstantColumn(int(np.flatnonzero(const)[0]))
        if on_constant not in ("isolate", "drop"):
            raise ValueError(f"unknown constant-column policy {on_constant!r}")

    norms = np.sqrt(ss)
    norms[const] = 1.0
    Z = Xc / norms
    Z[:, const] = 0.0
    # multiply in a canonical column order so that permuting the input
    # permutes the output bit for bit
    order = np.lexsort(Z[::-1])
    Zs = Z[:, order]
    Cs = Zs.T @ Zs
    inv = np.argsort(order)
    C = 0.5 * (Cs + Cs.T)[np.ix_(inv, inv)]
    np.clip(C, -1.0, 1.0, out=C)
    np.fill_diagonal(C, 0.0)
    if mode == "absolute":
        C = np.abs(C)
    C = _sparsify(C, threshold)

    if on_constant == "drop" and np.any(const):
        keep = np.flatnonzero(~const)
        C = C[np.ix_(keep, keep)]
        if node_ids is None:
            node_ids = [str(i) for i in keep]
        else:
            node_ids = [node_ids[i] for i in keep]
    return FeatureNetwork(C, node_ids, mode)


def column_distances(X, average=True) -> DistanceMatrix:
    """Euclidean distances between feature columns.

    With ``average`` the distance is normalised by ``sqrt(n)`` so it reads as
    a root-mean-square difference per sample.
    """
    X = np.asarray(X, dtype=float)
    sq = np.einsum("ij,ij->j", X, X)
    D2 = sq[:, None] + sq[None, :] - 2.0 * (X.T @ X)
    D2 = np.maximum(0.5 * (D2 + D2.T), 0.0)
    np.fill_diagonal(D2, 0.0)
    D = np.sqrt(D2)
    if average:
        D /= np.sqrt(X.shape[0])
    return DistanceMatrix(D)


def gaussian_kernel_network(D, sigma, threshold=None, node_ids=None) -> FeatureNetwork:
    """Gaussian kernel weights ``exp(-d_ij**2 / sigma**2)`` with zero diagonal."""
    if not np.isfinite(sigma) or sigma <= 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    if not isinstance(D, DistanceMatrix):
        D = DistanceMatrix(D)
    W = np.exp(-(D.D ** 2) / sigma ** 2)
    np.fill_diagonal(W, 0.0)
    return FeatureNetwork(_sparsify(W, threshold), node_ids, "kernel")


def _iter_lines(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            yield from fh
    else:
        yield from source


def load_prior_network(source: Union[str, os.PathLike, Iterable[str]], p: int,
                       node_ids: Optional[Sequence[str]] = None) -> FeatureNetwork:
    """Read a prior network from a whitespace separated ``i j weight`` edge list.

    Indices are 0-based, ``#`` starts a comment, and when an edge appears more
    than once the last row wins.
    """
    W = np.zeros((p, p))
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MalformedRow(line_no, raw.rstrip("\n"))
        try:
            i, j = int(parts[0]), int(parts[1])
            w = float(parts[2])
        except ValueError:
            raise MalformedRow(line_no, raw.rstrip("\n")) from None
        if not np.isfinite(w) or i == j:
            raise MalformedRow(line_no, raw.rstrip("\n"))
        if not (0 <= i < p and 0 <= j < p):
            raise IndexOutOfRange(f"line {line_no}: edge ({i}, {j}) outside [0, {p})")
        W[i, j] = W[j, i] = w
    return FeatureNetwork(W, node_ids, "prior")
