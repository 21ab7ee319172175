"""Cross-validation, metrics and pipelines.

A pipeline is named by a :class:`PipelineSpec` and built fresh for every
fold; the harness hands it only the training rows for ``fit`` and only the
test rows for scoring, so networks, clusterings, margin models and
calibrations never see held-out data.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.stats import rankdata

from .convtrain import ConvNetClassifier, TrainConfig
from .errors import FoldTooSmall, SingleClass
from .hierarchy import ClustererSpec, build_hierarchy, pool_dataset
from .laplacian import DEFAULT_S_GRID, build_laplacian, default_eps, eigendecompose, laplacian_power_transform
from .learners import (
    SmoothnessClassifier,
    SubnetworkSmoothnessClassifier,
    SvmBagNetwork,
    default_gamma,
    train_margin,
)
from .network import correlation_network


def _two_classes(y):
    y = np.asarray(y)
    if not (np.any(y == 1) and np.any(y == -1)):
        raise SingleClass("both classes must be present")
    return y


def balanced_accuracy(pred, y):
    """Mean of sensitivity (class +1) and specificity (class -1)."""
    y = _two_classes(y)
    pred = np.asarray(pred)
    pos, neg = y == 1, y == -1
    sens = np.sum(pred[pos] == 1) / pos.sum()
    spec = np.sum(pred[neg] == -1) / neg.sum()
    return float((sens + spec) / 2.0)


def auroc(scores, y):
    """Area under the ROC curve, ``P(s+ > s-) + P(s+ == s-) / 2``.

    Computed from midranks with integer arithmetic up to one final
    division, so ``auroc(s, y) + auroc(-s, y) == 1`` exactly.
    """
    y = _two_classes(y)
    scores = np.asarray(scores, dtype=float)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    twice_ranks = (2.0 * rankdata(scores)).astype(np.int64)
    twice_u = int(twice_ranks[pos].sum()) - n_pos * (n_pos + 1)
    return twice_u / (2 * n_pos * n_neg)


def adjusted_rand_index(a, b):
    """Chance-corrected agreement between two labelings."""
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1)
    comb = lambda x: x * (x - 1) / 2.0
    idx = comb(table).sum()
    ra, rb = comb(table.sum(axis=1)).sum(), comb(table.sum(axis=0)).sum()
    expected = ra * rb / comb(a.size)
    top = 0.5 * (ra + rb)
    if top == expected:
        return 1.0
    return float((idx - expected) / (top - expected))


@dataclass
class CVPlan:
    k: int = 10
    stratified: bool = True
    seed: int = 0

    def folds(self, y):
        """Test-row indices of each fold.

        Stratified plans shuffle each class and deal its rows round-robin,
        continuing the deal where the previous class stopped, so each fold
        holds every class within one sample of its global share.
        """
        y = np.asarray(y)
        rng = np.random.default_rng(self.seed)
        n = y.size
        if self.k < 2:
            raise FoldTooSmall("need at least two folds")
        fold_of = np.empty(n, dtype=int)
        if self.stratified:
            start = 0
            for label in (1, -1):
                rows = np.flatnonzero(y == label)
                if rows.size < self.k:
                    raise FoldTooSmall(f"class {label:+d} has {rows.size} rows for {self.k} folds")
                rows = rng.permutation(rows)
                fold_of[rows] = (start + np.arange(rows.size)) % self.k
                start = (start + rows.size) % self.k
        else:
            if n < self.k:
                raise FoldTooSmall(f"{n} rows for {self.k} folds")
            fold_of[rng.permutation(n)] = np.arange(n) % self.k
        return [np.flatnonzero(fold_of == f) for f in range(self.k)]


@dataclass
class MetricReport:
    """Per-fold balanced accuracy and AUROC with their mean and spread."""

    fold_balanced_accuracy: np.ndarray
    fold_auroc: np.ndarray
    pipeline: str = ""

    @property
    def balanced_accuracy(self):
        return float(np.mean(self.fold_balanced_accuracy))

    @property
    def auroc(self):
        return float(np.mean(self.fold_auroc))

    @property
    def balanced_accuracy_std(self):
        return float(np.std(self.fold_balanced_accuracy))

    @property
    def auroc_std(self):
        return float(np.std(self.fold_auroc))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("fold", "balanced_accuracy", "auroc"))
        for i, (ba, au) in enumerate(zip(self.fold_balanced_accuracy, self.fold_auroc)):
            w.writerow((i, repr(float(ba)), repr(float(au))))
        w.writerow(("mean", repr(self.balanced_accuracy), repr(self.auroc)))
        w.writerow(("std", repr(self.balanced_accuracy_std), repr(self.auroc_std)))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def table(self):
        lines = [f"{'fold':>6}  {'bal.acc':>8}  {'auroc':>8}"]
        for i, (ba, au) in enumerate(zip(self.fold_balanced_accuracy, self.fold_auroc)):
            lines.append(f"{i:>6}  {ba:8.4f}  {au:8.4f}")
        lines.append(f"{'mean':>6}  {self.balanced_accuracy:8.4f}  {self.auroc:8.4f}")
        lines.append(f"{'std':>6}  {self.balanced_accuracy_std:8.4f}  {self.auroc_std:8.4f}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# pipelines


class Standardizer:
    """Column z-scores with training-row mean and spread (constant columns
    keep unit spread)."""

    def fit(self, X):
        X = np.asarray(X, dtype=float)
        self.mu = X.mean(axis=0)
        sd = X.std(axis=0)
        self.sd = np.where(sd > 0, sd, 1.0)
        return self

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mu) / self.sd


class MarginClassifier:
    """Margin model on training-standardised features.

    Standardising keeps the kernel on a unit scale, without which SMO needs
    far more iterations on wide-ranging inputs.
    """

    def __init__(self, kernel="linear", C=1.0, gamma=None, standardize=True):
        self.kernel, self.C, self.gamma = kernel, C, gamma
        self.standardize = standardize

    def fit(self, X, y):
        self.scaler = Standardizer().fit(X) if self.standardize else None
        Z = self._scale(X)
        gamma = self.gamma
        if self.kernel == "rbf" and gamma is None:
            gamma = default_gamma(Z)
        self.model = train_margin(Z, y, self.kernel, self.C, gamma)
        return self

    def _scale(self, X):
        return self.scaler.transform(X) if self.scaler is not None else np.asarray(X, dtype=float)

    def decision_function(self, X):
        return self.model.decision_function(self._scale(X))


class ConstantClassifier:
    """Scores every row 0, which classifies everything as -1."""

    def fit(self, X, y):
        return self

    def decision_function(self, X):
        return np.zeros(np.asarray(X).shape[0])


class RandomClassifier:
    """Feature-blind seeded coin flips."""

    def __init__(self, seed=0):
        self.seed = seed

    def fit(self, X, y):
        return self

    def decision_function(self, X):
        return np.random.default_rng(self.seed).standard_normal(np.asarray(X).shape[0])


class NearestNeighbor:
    """1-NN; the score is the distance to the nearest -1 row minus the
    distance to the nearest +1 row."""

    def fit(self, X, y):
        self.X = np.asarray(X, dtype=float).copy()
        self.y = np.asarray(y).copy()
        return self

    def decision_function(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d2 = (np.einsum("ij,ij->i", X, X)[:, None] + np.einsum("ij,ij->i", self.X, self.X)[None, :]
              - 2.0 * X @ self.X.T)
        d = np.sqrt(np.maximum(d2, 0.0))
        return d[:, self.y == -1].min(axis=1) - d[:, self.y == 1].min(axis=1)


def _hierarchy_on(X, sizes, clusterer, network_mode):
    G = correlation_network(X, network_mode, on_constant="isolate")
    return build_hierarchy(G, sizes, clusterer)


class PoolClassifier:
    """Average-pool through a correlation-network hierarchy, then a
    standardised linear margin model on the pooled features."""

    def __init__(self, sizes, depth=None, clusterer=None, network_mode="absolute", C=1.0):
        self.sizes = list(sizes)
        self.depth = len(self.sizes) if depth is None else depth
        self.clusterer = clusterer or ClustererSpec()
        self.network_mode = network_mode
        self.C = C

    def fit(self, X, y):
        self.hierarchy = _hierarchy_on(X, self.sizes, self.clusterer, self.network_mode)
        self.model = MarginClassifier("linear", self.C).fit(self.transform(X), y)
        return self

    def transform(self, X):
        return pool_dataset(X, self.hierarchy, self.depth)

    def decision_function(self, X):
        return self.model.decision_function(self.transform(X))


class SvmBagClassifier:
    def __init__(self, sizes, clusterer=None, network_mode="absolute", C=1.0):
        self.sizes = list(sizes)
        self.clusterer = clusterer or ClustererSpec()
        self.network_mode = network_mode
        self.C = C

    def fit(self, X, y):
        H = _hierarchy_on(X, self.sizes, self.clusterer, self.network_mode)
        self.scaler = Standardizer().fit(X)
        self.net = SvmBagNetwork(H.partitions, self.C).fit(self.scaler.transform(X), y)
        return self

    def decision_function(self, X):
        return self.net.decision_function(self.scaler.transform(X))


class LaplacianPowerFeatures:
    """``[Psi_A(X; s), Psi_B(X; s)]`` with class networks from training rows.

    Each class Laplacian is eigendecomposed once, so many exponents can be
    applied cheaply after one ``fit``.
    """

    def __init__(self, kind="positive", eps=None):
        self.kind = kind
        self.eps = eps

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        self.ops = []
        for label in (1, -1):
            G = correlation_network(X[y == label], "signed", on_constant="isolate")
            if self.kind == "standard":
                G = G.absolute()
            L = build_laplacian(G, self.kind)
            eigendecompose(L)
            eps = default_eps(L) if self.eps is None else self.eps
            self.ops.append((L, eps))
        return self

    def transform(self, X, s):
        return np.hstack([laplacian_power_transform(L, X, s, eps) for L, eps in self.ops])


class RegularizedClassifier:
    def __init__(self, s=0.0, eps=None, kind="positive", base="rbf-svm", C=1.0, gamma=None):
        self.s = s
        self.features = LaplacianPowerFeatures(kind, eps)
        self.base = base
        self.C, self.gamma = C, gamma

    def fit(self, X, y):
        self.features.fit(X, y)
        self.model = _base_classifier(self.base, self.C, self.gamma)
        self.model.fit(self.features.transform(X, self.s), y)
        return self

    def decision_function(self, X):
        return self.model.decision_function(self.features.transform(X, self.s))


def _base_classifier(name, C=1.0, gamma=None):
    if name == "linear-svm":
        return MarginClassifier("linear", C)
    if name == "rbf-svm":
        return MarginClassifier("rbf", C, gamma)
    raise ValueError(f"unknown base classifier {name!r}")


def _clusterer(params, seed):
    return ClustererSpec(method=params.get("clusterer", "ward"), seed=seed,
                         m=params.get("m", 2.0))


PIPELINES = {
    "linear-svm": lambda p, seed: MarginClassifier("linear", p.get("C", 1.0)),
    "rbf-svm": lambda p, seed: MarginClassifier("rbf", p.get("C", 1.0), p.get("gamma")),
    "constant": lambda p, seed: ConstantClassifier(),
    "random": lambda p, seed: RandomClassifier(seed),
    "1nn": lambda p, seed: NearestNeighbor(),
    "pool": lambda p, seed: PoolClassifier(p["sizes"], p.get("depth"), _clusterer(p, seed),
                                           p.get("network_mode", "absolute"), p.get("C", 1.0)),
    "svm-bag": lambda p, seed: SvmBagClassifier(p["sizes"], _clusterer(p, seed),
                                                p.get("network_mode", "absolute"), p.get("C", 1.0)),
    "smoothness": lambda p, seed: SmoothnessClassifier(p.get("laplacian_kind", "positive"),
                                                       p.get("C", 1.0),
                                                       p.get("normalize_by_norm", False)),
    "multiscale-smoothness": lambda p, seed: SubnetworkSmoothnessClassifier(
        p.get("n_clusters"), p.get("laplacian_kind", "auto"), p.get("C", 1.0)),
    "regularize": lambda p, seed: RegularizedClassifier(
        p.get("s", 0.0), p.get("eps"), p.get("laplacian_kind", "positive"),
        p.get("base", "rbf-svm"), p.get("C", 1.0), p.get("gamma")),
    "conv-train": lambda p, seed: _conv_classifier(p, seed),
}


class _ConvPipeline:
    def __init__(self, sizes, clusterer, config, network_mode):
        self.sizes, self.clusterer = sizes, clusterer
        self.config, self.network_mode = config, network_mode

    def fit(self, X, y):
        H = _hierarchy_on(X, self.sizes, self.clusterer, self.network_mode)
        self.clf = ConvNetClassifier(H.partitions, self.config).fit(X, y)
        return self

    def decision_function(self, X):
        return self.clf.decision_function(X)


def _conv_classifier(p, seed):
    cfg = TrainConfig(alpha=p.get("alpha", 0.1), epochs=p.get("epochs", 200),
                      batch_size=p.get("batch_size", 0), seed=seed,
                      init_scale=p.get("init_scale", 1.0))
    return _ConvPipeline(p["sizes"], _clusterer(p, seed), cfg, p.get("network_mode", "absolute"))


@dataclass
class PipelineSpec:
    """Declarative pipeline: a registered name plus keyword parameters."""

    name: str
    params: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.name!r}; known: {sorted(PIPELINES)}")

    def build(self, seed=0):
        return PIPELINES[self.name](dict(self.params), seed)


def _fold_seed(seed, fold):
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _score_fold(X, y, train, test, make):
    model = make()
    model.fit(X[train].copy(), y[train].copy())
    s = np.asarray(model.decision_function(X[test].copy()), dtype=float)
    pred = np.where(s > 0, 1, -1)
    return balanced_accuracy(pred, y[test]), auroc(s, y[test])


def _run_folds(X, y, plan, make_for_fold, threads=1):
    folds = plan.folds(y)
    everything = np.arange(y.size)
    jobs = [(np.setdiff1d(everything, test), test, f) for f, test in enumerate(folds)]

    def one(job):
        train, test, f = job
        return _score_fold(X, y, train, test, lambda: make_for_fold(f))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(job) for job in jobs]
    ba, au = zip(*results)
    return np.array(ba), np.array(au)


def cross_validate(dataset, spec: PipelineSpec, plan: Optional[CVPlan] = None, threads=1):
    """Fold-wise balanced accuracy and AUROC of a pipeline.

    Every fold builds a fresh pipeline (seeded from the plan seed and fold
    index), fits it on the training rows and scores the test rows. Results
    are gathered in fold order whatever the thread count.
    """
    plan = plan or CVPlan()
    X, y = dataset.X, np.asarray(dataset.y)
    _two_classes(y)
    ba, au = _run_folds(X, y, plan, lambda f: spec.build(_fold_seed(plan.seed, f)), threads)
    return MetricReport(ba, au, spec.name)


def s_order(s):
    """Total order used to break ties: smaller ``|s|`` first, then negative."""
    return (abs(s), s > 0)


@dataclass
class GridResult:
    best_s: float
    reports: Dict[float, MetricReport]

    def means(self):
        return {s: r.balanced_accuracy for s, r in self.reports.items()}


def grid_search_s(dataset, s_grid=DEFAULT_S_GRID, eps=None, plan: Optional[CVPlan] = None,
                  base="rbf-svm", kind="positive", C=1.0, gamma=None, threads=1):
    """Cross-validated choice of the Laplacian power ``s``.

    Per fold the class networks and their eigendecompositions are built once
    from the training rows; every ``s`` then transforms training and test
    rows into ``[Psi_A(X; s), Psi_B(X; s)]`` and fits the base classifier.
    The winner has the highest mean balanced accuracy, ties going to
    :func:`s_order`.
    """
    s_grid = [float(s) for s in s_grid]
    if not s_grid:
        raise ValueError("s_grid must not be empty")
    plan = plan or CVPlan()
    X, y = dataset.X, np.asarray(dataset.y)
    _two_classes(y)
    folds = plan.folds(y)
    everything = np.arange(y.size)

    def one(test):
        train = np.setdiff1d(everything, test)
        feats = LaplacianPowerFeatures(kind, eps).fit(X[train], y[train])
        rows = []
        for s in s_grid:
            clf = _base_classifier(base, C, gamma).fit(feats.transform(X[train], s), y[train])
            score = clf.decision_function(feats.transform(X[test], s))
            rows.append((balanced_accuracy(np.where(score > 0, 1, -1), y[test]),
                         auroc(score, y[test])))
        return rows

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_fold = list(pool.map(one, folds))
    else:
        per_fold = [one(test) for test in folds]
    reports = {}
    for i, s in enumerate(s_grid):
        ba = np.array([rows[i][0] for rows in per_fold])
        au = np.array([rows[i][1] for rows in per_fold])
        reports[s] = MetricReport(ba, au, f"regularize(s={s:g})")
    best = min(s_grid, key=lambda s: (-reports[s].balanced_accuracy,) + s_order(s))
    return GridResult(best, reports)
