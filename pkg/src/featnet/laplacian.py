"""Graph Laplacians, smoothness penalties and fractional Laplacian powers.

Two Laplacians are supported for a weight matrix ``W``:

* ``standard``: ``D - W`` with ``d_i = sum_j W_ij``
* ``positive``: ``D* - W`` with ``d*_i = sum_j |W_ij|``; this one stays
  positive semidefinite when correlations make some weights negative.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ConvergenceFailure, DimensionMismatch, NegativePowerWithoutShift
from .network import FeatureNetwork

KINDS = ("standard", "positive")

DEFAULT_S_GRID = (-2.0, -1.5, -1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0, 1.5, 2.0)


class LaplacianOperator:
    """Laplacian matrix of a feature network with a lazily filled eigencache.

    The eigendecomposition is computed at most once; after that the operator
    is read-only and can be shared between threads.
    """

    def __init__(self, kind, matrix, source=None):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
        matrix = np.array(matrix, dtype=float, copy=True)
        matrix.setflags(write=False)
        self.kind = kind
        self.matrix = matrix
        self.source = source
        self._eig = None
        self._lock = threading.Lock()

    @property
    def p(self):
        return self.matrix.shape[0]

    @property
    def is_psd(self):
        """True when the quadratic form is guaranteed nonnegative."""
        if self.kind == "positive":
            return True
        return self.source is not None and not self.source.signed

    @property
    def eigencache(self):
        return self._eig

    def __repr__(self):
        cached = "cached" if self._eig is not None else "no eigencache"
        return f"LaplacianOperator(kind={self.kind!r}, p={self.p}, {cached})"


def laplacian_matrix(W, kind="standard"):
    W = np.asarray(W, dtype=float)
    if kind == "standard":
        d = W.sum(axis=1)
    elif kind == "positive":
        d = np.abs(W).sum(axis=1)
    else:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    L = -W.copy()
    L[np.diag_indices_from(L)] += d
    return L


def build_laplacian(G: FeatureNetwork, kind="standard") -> LaplacianOperator:
    return LaplacianOperator(kind, laplacian_matrix(G.W, kind), source=G)


def _check_psd_use(L):
    if not L.is_psd:
        raise ValueError(
            "standard Laplacian of a signed network is indefinite; "
            "use kind='positive'")


def smoothness_penalty(L: LaplacianOperator, x):
    """Quadratic form ``x^T L x``.

    ``x`` may be a single length-p vector or an (n, p) matrix of row vectors,
    in which case one penalty per row is returned.
    """
    _check_psd_use(L)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != L.p:
        raise DimensionMismatch(f"vector length {x.shape[-1]} != {L.p} nodes")
    if x.ndim == 1:
        return float(x @ L.matrix @ x)
    return np.einsum("ij,ij->i", x @ L.matrix, x)


def eigendecompose(L: LaplacianOperator):
    """Populate and return the eigencache ``(eigenvalues, eigenvectors)``.

    Eigenvalues are ascending and eigenvectors are the orthonormal columns of
    the returned matrix.
    """
    with L._lock:
        if L._eig is None:
            try:
                lam, V = np.linalg.eigh(L.matrix)
            except np.linalg.LinAlgError as exc:
                raise ConvergenceFailure(str(exc)) from exc
            lam.setflags(write=False)
            V.setflags(write=False)
            L._eig = (lam, V)
    return L._eig


def default_eps(L: LaplacianOperator) -> float:
    lam, _ = eigendecompose(L)
    return 1e-3 * float(np.mean(np.maximum(lam, 0.0)))


def spectral_multipliers(lam, s, eps=0.0):
    """``(lambda + eps) ** s`` with roundoff negatives clamped to zero."""
    lam = np.maximum(np.asarray(lam, dtype=float), 0.0) + eps
    if s < 0:
        if np.any(lam <= 1e-12):
            raise NegativePowerWithoutShift(
                f"power {s} of a singular Laplacian needs eps > 0")
    return lam ** s


def laplacian_power_transform(L: LaplacianOperator, x, s, eps=0.0):
    """Apply ``(L + eps I) ** s`` to a vector or to each row of a matrix.

    Negative ``s`` smooths (fractional integration), positive ``s`` sharpens
    (fractional differentiation). ``s == 0`` is the identity and returns a
    copy of ``x`` bit for bit.
    """
    _check_psd_use(L)
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != L.p:
        raise DimensionMismatch(f"vector length {x.shape[-1]} != {L.p} nodes")
    if s == 0:
        return x.copy()
    lam, V = eigendecompose(L)
    mult = spectral_multipliers(lam, s, eps)
    # rows and single vectors share the same expression because the operator is symmetric
    return ((x @ V) * mult) @ V.T
