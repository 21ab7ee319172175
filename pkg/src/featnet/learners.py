"""Classifiers and feedforward layers.

* :func:`train_margin` -- soft-margin kernel SVM solved in the dual by SMO
  (pairwise coordinate ascent with second-order working-set selection).
* :func:`platt_fit` -- sigmoid calibration of margin scores.
* :class:`SvmBagLayer` / :class:`SvmBagNetwork` -- layers whose nodes are
  calibrated probabilities of per-cluster linear margin models.
* :class:`SmoothnessClassifier` -- linear discriminant on the pair of class
  smoothness penalties ``(f^T L_A f, f^T L_B f)``.
* :func:`multiscale_smoothness_features` -- one smoothness penalty per
  cluster subgraph.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numba
import numpy as np

from .clustering import Partition, SoftPartition, community_detect, ward_clusters, network_dissimilarity
from .errors import DimensionMismatch, FeatnetError, NonConvergence, SingleClass
from .laplacian import build_laplacian, laplacian_matrix, smoothness_penalty
from .network import FeatureNetwork, correlation_network

TAU = 1e-12


def _check_labels(y):
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise SingleClass("both classes must be present")
    return y


def default_gamma(X):
    """``1 / (p * var(X))``, falling back to ``1 / p`` for constant data."""
    X = np.asarray(X, dtype=float)
    var = X.var()
    return 1.0 / (X.shape[1] * (var if var > 0 else 1.0))


def kernel_matrix(A, B, kernel="linear", gamma=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        d2 = (np.einsum("ij,ij->i", A, A)[:, None]
              + np.einsum("ij,ij->i", B, B)[None, :] - 2.0 * (A @ B.T))
        return np.exp(-gamma * np.maximum(d2, 0.0))
    raise ValueError(f"unknown kernel {kernel!r}")


@dataclass
class MarginModel:
    """Trained kernel margin classifier ``f(x) = sum_i a_i K(x_i, x) + b``.

    ``coef`` holds the signed dual coefficients ``alpha_i * y_i`` of the
    retained support points, so ``0 <= |coef| <= C``.
    """

    kernel: str
    gamma: Optional[float]
    coef: np.ndarray
    bias: float
    support_points: np.ndarray
    C: float
    support: Optional[np.ndarray] = None
    dual_objective: float = float("nan")
    n_iter: int = 0

    @property
    def n_features(self):
        return self.support_points.shape[1]

    def decision_function(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.coef.size == 0:
            out = np.full(X.shape[0], self.bias)
        elif self.kernel == "linear":
            out = X @ (self.coef @ self.support_points) + self.bias
        else:
            out = kernel_matrix(X, self.support_points, self.kernel, self.gamma) @ self.coef + self.bias
        return float(out[0]) if single else out

    @property
    def weights(self):
        """Primal weight vector (linear kernel only)."""
        if self.kernel != "linear":
            raise AttributeError("primal weights exist only for the linear kernel")
        return self.coef @ self.support_points


def dual_objective(alpha, y, K):
    """``sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij``."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


@numba.njit(cache=True)
def _smo_core(K, y, C, tol, max_iter):
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    while it < max_iter:
        # most violating i in I_up, KKT gap against I_low
        i = -1
        m_val = -np.inf
        low_min = np.inf
        for t in range(n):
            v = -y[t] * G[t]
            if y[t] > 0:
                in_up = alpha[t] < C
                in_low = alpha[t] > 0
            else:
                in_up = alpha[t] > 0
                in_low = alpha[t] < C
            if in_up and v > m_val:
                m_val = v
                i = t
            if in_low and v < low_min:
                low_min = v
        if m_val - low_min < tol:
            return alpha, G, it, True
        # second-order choice of j
        j = -1
        best = np.inf
        Kii = K[i, i]
        for t in range(n):
            if y[t] > 0:
                in_low = alpha[t] > 0
            else:
                in_low = alpha[t] < C
            if not in_low:
                continue
            b = m_val + y[t] * G[t]
            if b <= 0:
                continue
            a = Kii + K[t, t] - 2.0 * K[i, t]
            if a <= 0:
                a = TAU
            score = -(b * b) / a
            if score < best:
                best = score
                j = t
        ai = alpha[i]
        aj = alpha[j]
        quad = Kii + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni = ai + delta
            nj = aj + delta
            if diff > 0:
                if nj < 0:
                    nj = 0.0
                    ni = diff
            elif ni < 0:
                ni = 0.0
                nj = -diff
            if diff > 0:
                if ni > C:
                    ni = C
                    nj = C - diff
            elif nj > C:
                nj = C
                ni = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni = ai - delta
            nj = aj + delta
            if total > C:
                if ni > C:
                    ni = C
                    nj = total - C
            elif nj < 0:
                nj = 0.0
                ni = total
            if total > C:
                if nj > C:
                    nj = C
                    ni = total - C
            elif ni < 0:
                ni = 0.0
                nj = total
        di = (ni - ai) * y[i]
        dj = (nj - aj) * y[j]
        for t in range(n):
            G[t] += y[t] * (K[t, i] * di + K[t, j] * dj)
        alpha[i] = ni
        alpha[j] = nj
        it += 1
    return alpha, G, it, False


def _smo(K, y, C, tol, max_iter):
    alpha, G, it, ok = _smo_core(np.ascontiguousarray(K), y, C, tol, max_iter)
    if not ok:
        raise NonConvergence(f"SMO did not reach tolerance {tol} in {max_iter} iterations")
    pos = y > 0
    # bias from free vectors, or the midpoint of the feasible interval
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        rho = float(yG[free].mean())
    else:
        ub_mask = np.where(pos, alpha <= 0, alpha >= C)
        lb_mask = ~ub_mask
        ub = yG[ub_mask].min() if np.any(ub_mask) else np.inf
        lb = yG[lb_mask].max() if np.any(lb_mask) else -np.inf
        rho = 0.5 * (ub + lb)
    return alpha, -rho, it


def train_margin(X, y, kernel="linear", C=1.0, gamma=None, tol=1e-4, max_iter=None):
    """Fit a soft-margin classifier by solving its dual with SMO.

    Parameters
    ----------
    X : array_like, shape (n, p)
    y : array_like of {-1, +1}, shape (n,)
    kernel : {"linear", "rbf"}
    C : float
        Box constraint on the dual coefficients.
    gamma : float, optional
        RBF width; defaults to ``1 / (p * var(X))``.
    tol : float
        Stop once the maximal KKT violation drops below this value.
    max_iter : int, optional
        Defaults to ``max(10**6, 1000 n)``; exceeding it raises
        :class:`NonConvergence`.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch("training data must be 2-D")
    y = _check_labels(y)
    if X.shape[0] != y.size:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.size} labels")
    if C <= 0:
        raise ValueError("C must be positive")
    if kernel == "rbf" and gamma is None:
        gamma = default_gamma(X)
    K = kernel_matrix(X, X, kernel, gamma)
    max_iter = max(1_000_000, 1000 * y.size) if max_iter is None else max_iter
    alpha, bias, n_iter = _smo(K, y, float(C), tol, max_iter)
    sv = np.flatnonzero(alpha > 0)
    return MarginModel(
        kernel=kernel,
        gamma=gamma if kernel == "rbf" else None,
        coef=alpha[sv] * y[sv],
        bias=float(bias),
        support_points=X[sv].copy(),
        C=float(C),
        support=sv,
        dual_objective=dual_objective(alpha, y, K),
        n_iter=n_iter,
    )


def decision(model, x):
    return model.decision_function(x)


def classify(model, x):
    """Label and score; a score of exactly zero goes to the negative class."""
    score = model.decision_function(x)
    label = np.where(np.asarray(score) > 0, 1, -1)
    if np.ndim(score) == 0:
        return int(label), float(score)
    return label, score


# ---------------------------------------------------------------------------
# Platt scaling


def _platt_loss(A, B, s, t):
    z = A * s + B
    # log(1 + exp(z)) - t*z written stably for both signs of z
    return float(np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z))


@dataclass
class PlattCalibrator:
    """``P(y = +1 | s) = 1 / (1 + exp(A s + B))``."""

    A: float
    B: float
    n_iter: int = 0

    def predict_proba(self, scores):
        z = self.A * np.asarray(scores, dtype=float) + self.B
        p = np.exp(-np.logaddexp(0.0, z))
        tiny = np.finfo(float).eps
        return np.clip(p, tiny, 1.0 - tiny)


def platt_targets(y):
    y = _check_labels(y)
    n_pos = np.sum(y > 0)
    n_neg = y.size - n_pos
    return np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))


def platt_fit(scores, y, gtol=1e-8, max_iter=100) -> PlattCalibrator:
    """Fit the sigmoid by Newton's method with backtracking.

    The targets are the smoothed labels ``(N+ + 1) / (N+ + 2)`` and
    ``1 / (N- + 2)``, which keeps the fit finite even for separable scores.
    """
    s = np.asarray(scores, dtype=float).ravel()
    t = platt_targets(y)
    if s.size != t.size:
        raise DimensionMismatch(f"{s.size} scores but {t.size} labels")
    n_pos = np.sum(t > 0.5)
    n_neg = t.size - n_pos
    A, B = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    f = _platt_loss(A, B, s, t)
    it = 0
    for it in range(1, max_iter + 1):
        p = np.exp(-np.logaddexp(0.0, A * s + B))
        d1 = t - p
        g = np.array([s @ d1, d1.sum()])
        if np.hypot(*g) < gtol:
            break
        w = p * (1.0 - p)
        h11 = s * s @ w + 1e-12
        h22 = w.sum() + 1e-12
        h21 = s @ w
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g[0] - h21 * g[1]) / det
        dB = -(-h21 * g[0] + h11 * g[1]) / det
        gd = g[0] * dA + g[1] * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = _platt_loss(nA, nB, s, t)
            if nf < f + 1e-4 * step * gd:
                A, B, f = nA, nB, nf
                break
            step /= 2.0
        else:
            break
    return PlattCalibrator(float(A), float(B), it)


# ---------------------------------------------------------------------------
# SVM bagging


@dataclass
class SvmBagLayer:
    """One layer of cluster-wise calibrated linear margin models.

    Column ``j`` of the output is the Platt probability of the positive class
    given only the features of cluster ``j``. A cluster whose model cannot be
    trained contributes a constant 0.5 column and a record in ``failures``.
    """

    partition: Partition
    box_C: float = 1.0
    models: list = field(default_factory=list)
    calibrators: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.partition.p:
            raise DimensionMismatch(f"{X.shape[1]} features, partition over {self.partition.p}")
        y = _check_labels(y)
        self.models, self.calibrators, self.failures = [], [], []
        for j, members in enumerate(self.partition.clusters()):
            try:
                model = train_margin(X[:, members], y, "linear", self.box_C)
                cal = platt_fit(model.decision_function(X[:, members]), y)
            except FeatnetError as exc:
                model, cal = None, None
                self.failures.append((j, f"{exc.category}: {exc}"))
                warnings.warn(f"cluster {j}: {exc}", RuntimeWarning, stacklevel=2)
            self.models.append(model)
            self.calibrators.append(cal)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.partition.p:
            raise DimensionMismatch(f"{X.shape[1]} features, partition over {self.partition.p}")
        out = np.full((X.shape[0], self.partition.d), 0.5)
        for j, members in enumerate(self.partition.clusters()):
            model, cal = self.models[j], self.calibrators[j]
            if model is not None:
                out[:, j] = cal.predict_proba(model.decision_function(X[:, members]))
        return out


def svm_bag_layer(X_train, y_train, partition, box_C=1.0, X_apply=None):
    """Train a :class:`SvmBagLayer` on training rows and apply it.

    Returns the probability matrix for ``X_apply`` (training rows when not
    given) together with the fitted layer.
    """
    if isinstance(partition, SoftPartition):
        partition = partition.harden()
    layer = SvmBagLayer(partition, box_C).fit(X_train, y_train)
    return layer.transform(X_train if X_apply is None else X_apply), layer


@dataclass
class SvmBagNetwork:
    """Stack of SVM-bagging layers over a cluster hierarchy plus a final
    linear margin model on the last probability layer."""

    partitions: List[Partition]
    box_C: float = 1.0
    layers: list = field(default_factory=list)
    final: Optional[MarginModel] = None

    def fit(self, X, y):
        H = np.asarray(X, dtype=float)
        self.layers = []
        for C in self.partitions:
            if isinstance(C, SoftPartition):
                C = C.harden()
            layer = SvmBagLayer(C, self.box_C).fit(H, y)
            self.layers.append(layer)
            H = layer.transform(H)
        self.final = train_margin(H, y, "linear", self.box_C)
        return self

    def features(self, X, depth=None):
        H = np.asarray(X, dtype=float)
        for layer in self.layers[:depth]:
            H = layer.transform(H)
        return H

    def decision_function(self, X):
        return self.final.decision_function(self.features(X))


# ---------------------------------------------------------------------------
# smoothness features


def _standardize_fit(F):
    mu = F.mean(axis=0)
    sd = F.std(axis=0)
    sd[sd == 0] = 1.0
    return mu, sd


@dataclass
class SmoothnessClassifier:
    """Classify by adaptation to class-specific feature networks.

    Each class (``+1`` is class A, ``-1`` class B) gets a correlation network
    built from its own training rows. A sample ``f`` maps to
    ``Phi(f) = (f^T L_A f, f^T L_B f)`` and a linear margin model separates the
    standardised ``Phi`` values. With ``normalize_by_norm`` both penalties are
    divided by ``|f|^2`` first, which makes predictions invariant to rescaling
    ``f``.
    """

    laplacian_kind: str = "positive"
    C: float = 1.0
    normalize_by_norm: bool = False
    on_constant: str = "isolate"
    L_A: object = None
    L_B: object = None
    model: Optional[MarginModel] = None
    _mu: np.ndarray = None
    _sd: np.ndarray = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = _check_labels(y)
        G_A = correlation_network(X[y > 0], "signed", on_constant=self.on_constant)
        G_B = correlation_network(X[y < 0], "signed", on_constant=self.on_constant)
        self.L_A = build_laplacian(G_A, self.laplacian_kind)
        self.L_B = build_laplacian(G_B, self.laplacian_kind)
        F = self.phi(X)
        self._mu, self._sd = _standardize_fit(F)
        self.model = train_margin((F - self._mu) / self._sd, y, "linear", self.C)
        return self

    def phi(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        F = np.column_stack([smoothness_penalty(self.L_A, X), smoothness_penalty(self.L_B, X)])
        if self.normalize_by_norm:
            nrm = np.einsum("ij,ij->i", X, X)
            F = F / np.where(nrm > 0, nrm, 1.0)[:, None]
        return F

    def decision_function(self, X):
        return self.model.decision_function((self.phi(X) - self._mu) / self._sd)


def _subgraph_laplacian(Wsub, kind):
    if kind == "auto":
        kind = "positive" if np.any(Wsub < 0) else "standard"
    return laplacian_matrix(Wsub, kind)


def multiscale_smoothness_features(f, G: FeatureNetwork, C, kind="auto"):
    """Smoothness penalty of ``f`` restricted to each cluster subgraph.

    Component ``j`` is ``h_j^T L_j h_j`` where ``h_j`` selects the entries of
    ``f`` in cluster ``j`` and ``L_j`` is the Laplacian of the induced
    subgraph; equivalently the sum over unordered pairs ``s < t`` in the
    cluster of ``W_st (f_s - f_t)^2``. ``kind="auto"`` uses the standard
    Laplacian on nonnegative subgraphs and the positive one otherwise.
    ``f`` may also be an (n, p) matrix, giving an (n, d) result.
    """
    if isinstance(C, SoftPartition):
        C = C.harden()
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != G.p or C.p != G.p:
        raise DimensionMismatch("vector, network and partition sizes disagree")
    X = np.atleast_2d(f)
    out = np.empty((X.shape[0], C.d))
    for j, members in enumerate(C.clusters()):
        Lj = _subgraph_laplacian(G.W[np.ix_(members, members)], kind)
        H = X[:, members]
        out[:, j] = np.einsum("ij,ij->i", H @ Lj, H)
    return out[0] if f.ndim == 1 else out


def cross_cluster_penalty(f, G: FeatureNetwork, C, kind="standard"):
    """Penalty carried by edges joining different clusters.

    With ``kind="standard"`` this is the sum over cross-cluster pairs
    ``s < t`` of ``W_st (f_s - f_t)^2``; adding it to the per-cluster
    penalties recovers the whole-graph quadratic form.
    """
    if isinstance(C, SoftPartition):
        C = C.harden()
    f = np.asarray(f, dtype=float)
    X = np.atleast_2d(f)
    cross = C.assign[:, None] != C.assign[None, :]
    Wc = np.where(cross, G.W, 0.0)
    Lc = laplacian_matrix(Wc, kind)
    out = np.einsum("ij,ij->i", X @ Lc, X)
    return out[0] if f.ndim == 1 else out


def multiscale_stack(X, hierarchy, kind="auto"):
    """Iterate subgraph smoothness features up a hierarchy.

    Layer ``k+1`` is the vector of per-cluster penalties of layer ``k``; the
    union of all produced layers is returned column-wise.
    """
    H = np.atleast_2d(np.asarray(X, dtype=float))
    feats = []
    for G, C in zip(hierarchy.layers[:-1], hierarchy.partitions):
        H = multiscale_smoothness_features(H, G, C, kind)
        feats.append(H)
    return np.hstack(feats)


@dataclass
class SubnetworkSmoothnessClassifier:
    """Per-community smoothness penalties under both class networks.

    The training rows define one absolute correlation network which is cut
    into communities (modularity bisection, or Ward with ``n_clusters``).
    Every community yields two features: its subgraph penalty under the class
    A network and under the class B network. A linear margin model on the
    standardised features makes the decision.
    """

    n_clusters: Optional[int] = None
    kind: str = "auto"
    C: float = 1.0
    on_constant: str = "isolate"
    partition: Optional[Partition] = None
    G_A: Optional[FeatureNetwork] = None
    G_B: Optional[FeatureNetwork] = None
    model: Optional[MarginModel] = None
    _mu: np.ndarray = None
    _sd: np.ndarray = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = _check_labels(y)
        G = correlation_network(X, "absolute", on_constant=self.on_constant)
        if self.n_clusters is None:
            self.partition = community_detect(G)
        else:
            self.partition = ward_clusters(network_dissimilarity(G), self.n_clusters)
        self.G_A = correlation_network(X[y > 0], "signed", on_constant=self.on_constant)
        self.G_B = correlation_network(X[y < 0], "signed", on_constant=self.on_constant)
        F = self.features(X)
        self._mu, self._sd = _standardize_fit(F)
        self.model = train_margin((F - self._mu) / self._sd, y, "linear", self.C)
        return self

    def features(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.hstack([
            multiscale_smoothness_features(X, self.G_A, self.partition, self.kind),
            multiscale_smoothness_features(X, self.G_B, self.partition, self.kind),
        ])

    def decision_function(self, X):
        return self.model.decision_function((self.features(X) - self._mu) / self._sd)
