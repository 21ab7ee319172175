"""Datasets: CSV ingestion and synthetic generators.

Generators:

* :func:`simulize` mixes the class covariances of a source dataset,
  ``Sigma_1 = b Sigma_A + (1 - b) Sigma_B`` and
  ``Sigma_2 = (1 - b) Sigma_A + b Sigma_B``, and draws zero-mean Gaussian
  classes from the mixtures. :func:`block_source_classes` supplies a
  synthetic source when no real dataset is at hand.
* :func:`planted_two_class` draws ``f = g + eta`` with a block-correlated
  signal ``g`` carrying the class information and white noise ``eta``.
* :func:`blurred_two_class` smooths Gaussian classes with a negative
  Laplacian power on a ring network.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from .clustering import Partition
from .errors import (
    InvalidBlockSpec,
    LabelMismatch,
    NonFinite,
    ParseError,
    PSDRepairFailed,
)
from .laplacian import build_laplacian, eigendecompose, laplacian_power_transform
from .network import FeatureNetwork

LABEL_CODES = {"A": 1, "B": -1, "+1": 1, "1": 1, "-1": -1}


@dataclass
class Dataset:
    """Feature matrix with binary labels (``+1`` is class A, ``-1`` class B)."""

    X: np.ndarray
    y: np.ndarray
    feature_ids: Optional[Tuple[str, ...]] = None
    sample_ids: Optional[Tuple[str, ...]] = None
    class_names: Tuple[str, str] = ("A", "B")
    blocks: Optional[Partition] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.asarray(self.y)
        if X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if y.shape != (X.shape[0],):
            raise LabelMismatch(f"{X.shape[0]} rows but {y.size} labels")
        if not np.all(np.isin(y, (-1, 1))):
            raise LabelMismatch("labels must be -1 or +1")
        bad = np.argwhere(~np.isfinite(X))
        if bad.size:
            raise NonFinite(int(bad[0, 0]), int(bad[0, 1]))
        self.X = X
        self.y = y.astype(int)
        if self.feature_ids is None:
            self.feature_ids = tuple(f"f{j}" for j in range(X.shape[1]))
        else:
            self.feature_ids = tuple(str(f) for f in self.feature_ids)
            if len(self.feature_ids) != X.shape[1]:
                raise LabelMismatch(f"{len(self.feature_ids)} feature ids for {X.shape[1]} columns")
        if self.sample_ids is None:
            self.sample_ids = tuple(f"s{i}" for i in range(X.shape[0]))
        else:
            self.sample_ids = tuple(str(s) for s in self.sample_ids)
            if len(self.sample_ids) != X.shape[0]:
                raise LabelMismatch(f"{len(self.sample_ids)} sample ids for {X.shape[0]} rows")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.X[rows], self.y[rows], self.feature_ids,
                       tuple(self.sample_ids[i] for i in rows), self.class_names, self.blocks)

    def class_rows(self, label):
        return self.X[self.y == label]


def concat_classes(first: Dataset, second: Dataset) -> Dataset:
    """Stack two datasets over the same features (rows of ``first`` first)."""
    if first.p != second.p:
        raise LabelMismatch("datasets have different feature counts")
    return Dataset(np.vstack([first.X, second.X]), np.concatenate([first.y, second.y]),
                   first.feature_ids, first.sample_ids + second.sample_ids, first.class_names)


# ---------------------------------------------------------------------------
# CSV


def _read_rows(path):
    with open(path, newline="") as fh:
        return [(i, row) for i, row in enumerate(csv.reader(fh), start=1) if row]


def _parse_label(text, line):
    code = LABEL_CODES.get(text.strip())
    if code is None:
        raise LabelMismatch(f"line {line}: unknown label {text!r} (expected A or B)")
    return code


def load_dataset(matrix_file, label_file=None, label_column=None) -> Dataset:
    """Read a dataset from CSV.

    The matrix file has a header of feature ids and one sample per row. An
    optional first column named ``sample_id`` holds sample identifiers.
    Labels come either from ``label_file`` (``sample_id,label`` rows) or from
    a named column of the matrix file; ``A`` maps to ``+1`` and ``B`` to
    ``-1``.
    """
    rows = _read_rows(matrix_file)
    if not rows:
        raise ParseError("empty matrix file", 1)
    _, header = rows[0]
    header = [h.strip() for h in header]
    has_ids = header[0] == "sample_id"
    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise LabelMismatch(f"no column named {label_column!r}")
        label_idx = header.index(label_column)
    feat_cols = [j for j in range(len(header)) if j != label_idx and not (has_ids and j == 0)]
    X, ids, labels = [], [], []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", line)
        try:
            X.append([float(row[j]) for j in feat_cols])
        except ValueError:
            raise ParseError("non-numeric cell", line) from None
        ids.append(row[0].strip() if has_ids else f"s{len(ids)}")
        if label_idx is not None:
            labels.append(_parse_label(row[label_idx], line))
    X = np.array(X, dtype=float).reshape(len(ids), len(feat_cols))
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        raise NonFinite(int(bad[0, 0]), int(bad[0, 1]))

    if label_file is not None:
        lab_rows = _read_rows(label_file)
        if lab_rows and lab_rows[0][1][0].strip() == "sample_id":
            lab_rows = lab_rows[1:]
        by_id = {}
        for line, row in lab_rows:
            if len(row) != 2:
                raise ParseError("label rows must be sample_id,label", line)
            by_id[row[0].strip()] = _parse_label(row[1], line)
        if len(by_id) != len(ids):
            raise LabelMismatch(f"{len(by_id)} labels for {len(ids)} samples")
        if has_ids:
            missing = [s for s in ids if s not in by_id]
            if missing:
                raise LabelMismatch(f"no label for sample {missing[0]!r}")
            labels = [by_id[s] for s in ids]
        else:
            labels = list(by_id.values())
    elif label_idx is None:
        raise LabelMismatch("need a label file or a label column")
    features = [header[j] for j in feat_cols]
    return Dataset(X, np.array(labels, dtype=int), features, ids)


def save_dataset(ds: Dataset, matrix_file, label_file):
    """Write the matrix and label CSVs read by :func:`load_dataset`.

    Floats are written with ``repr`` so a save/load round trip is exact.
    """
    with open(matrix_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample_id",) + ds.feature_ids)
        for sid, row in zip(ds.sample_ids, ds.X):
            w.writerow([sid] + [repr(float(v)) for v in row])
    with open(label_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample_id", "label"))
        for sid, lab in zip(ds.sample_ids, ds.y):
            w.writerow((sid, "A" if lab == 1 else "B"))


# ---------------------------------------------------------------------------
# Gaussian sampling


def _repaired_cholesky(Sigma, jitter, attempts=3):
    try:
        return linalg.cholesky(Sigma, lower=True)
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(Sigma)))
    delta = jitter * (scale if scale > 0 else 1.0)
    eye = np.eye(Sigma.shape[0])
    for _ in range(attempts):
        try:
            return linalg.cholesky(Sigma + delta * eye, lower=True)
        except linalg.LinAlgError:
            delta *= 10.0
    raise PSDRepairFailed(f"covariance not positive definite after jitter {delta / 10.0:.3g}")


def sample_mvn(Sigma, n, seed, jitter=1e-8):
    """Draw ``n`` rows from ``N(0, Sigma)`` through a Cholesky factor.

    A covariance that is only semidefinite is repaired by adding
    ``delta * I`` with ``delta = jitter * mean(diag(Sigma))``, growing
    tenfold up to three times.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(Sigma, Sigma.T, rtol=1e-10, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    Sigma = 0.5 * (Sigma + Sigma.T)
    L = _repaired_cholesky(Sigma, jitter)
    Z = np.random.default_rng(seed).standard_normal((n, Sigma.shape[0]))
    return Z @ L.T


@dataclass
class SimulizeConfig:
    b: float = 0.3
    n_per_class: int = 300
    p_sub: Optional[int] = 200
    seed: int = 0
    jitter: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be positive")


def mixed_covariances(S_A, S_B, b):
    """``(b S_A + (1-b) S_B, (1-b) S_A + b S_B)``."""
    S_A = np.asarray(S_A, dtype=float)
    S_B = np.asarray(S_B, dtype=float)
    return b * S_A + (1.0 - b) * S_B, (1.0 - b) * S_A + b * S_B


def simulize(X_A, X_B, cfg: SimulizeConfig = None):
    """Zero-mean Gaussian classes with mixed source covariances.

    One random feature subset of size ``cfg.p_sub`` is shared by both
    classes. Returns ``(class_1, class_2)``: class 1 is labelled ``+1`` and
    drawn from ``Sigma_1``, class 2 is labelled ``-1`` and drawn from
    ``Sigma_2``.
    """
    cfg = cfg or SimulizeConfig()
    X_A = np.asarray(X_A, dtype=float)
    X_B = np.asarray(X_B, dtype=float)
    if X_A.shape[1] != X_B.shape[1]:
        raise ValueError("source classes have different feature counts")
    if min(X_A.shape[0], X_B.shape[0]) < 2:
        raise ValueError("each source class needs at least two rows")
    p = X_A.shape[1]
    p_sub = p if cfg.p_sub is None else cfg.p_sub
    if p_sub > p:
        raise ValueError(f"p_sub={p_sub} exceeds {p} features")
    ss = np.random.SeedSequence(cfg.seed)
    pick_seed, seed_1, seed_2 = ss.spawn(3)
    idx = np.sort(np.random.default_rng(pick_seed).choice(p, p_sub, replace=False))
    S_A = np.cov(X_A[:, idx], rowvar=False)
    S_B = np.cov(X_B[:, idx], rowvar=False)
    S_1, S_2 = mixed_covariances(S_A, S_B, cfg.b)
    n = cfg.n_per_class
    ids = [f"f{j}" for j in idx]
    one = Dataset(sample_mvn(S_1, n, seed_1, cfg.jitter), np.ones(n, dtype=int), ids,
                  [f"c1_{i}" for i in range(n)])
    two = Dataset(sample_mvn(S_2, n, seed_2, cfg.jitter), -np.ones(n, dtype=int), ids,
                  [f"c2_{i}" for i in range(n)])
    return one, two


# ---------------------------------------------------------------------------
# planted data


def _block_sizes(p, block_spec):
    if np.isscalar(block_spec):
        k = int(block_spec)
        if k < 1 or p % k:
            raise InvalidBlockSpec(f"{p} features do not split into {block_spec} equal blocks")
        return [p // k] * k
    sizes = [int(s) for s in block_spec]
    if not sizes or min(sizes) < 1 or sum(sizes) != p:
        raise InvalidBlockSpec(f"block sizes {sizes} must be positive and sum to {p}")
    return sizes


def planted_two_class(p, block_spec, noise_sigma, n, seed, shift=0.1, contrast=0.05,
                      loading=0.5) -> Dataset:
    """Two classes with block-structured signal plus white noise.

    Feature ``j`` in block ``b`` of a sample with label ``y`` is ::

        g_j = loading * z_b + y * (shift + c_j),    f_j = g_j + noise_sigma * eta_j

    where ``z_b`` is a per-sample standard normal block factor and ``c_j`` is
    a within-block contrast of magnitude ``contrast`` with alternating sign
    (summing to zero over each even-sized block). ``shift`` survives block
    averaging; ``contrast`` does not. ``n`` samples are drawn per class and
    the planted blocks are returned in ``Dataset.blocks``.
    """
    sizes = _block_sizes(p, block_spec)
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    assign = np.repeat(np.arange(len(sizes)), sizes)
    within = np.concatenate([np.arange(s) for s in sizes])
    c = contrast * np.where(within % 2 == 0, 1.0, -1.0)
    y = np.repeat([1, -1], n)
    Z = rng.standard_normal((2 * n, len(sizes)))
    G = loading * Z[:, assign] + y[:, None] * (shift + c)[None, :]
    X = G + noise_sigma * rng.standard_normal((2 * n, p))
    return Dataset(X, y, blocks=Partition(assign, len(sizes)))


def block_covariance(p, block_size, rho, seed):
    """Unit-variance covariance with equicorrelated blocks on a random
    relabelling of the features."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    labels = np.empty(p, dtype=int)
    labels[rng.permutation(p)] = np.arange(p) // block_size
    S = np.where(labels[:, None] == labels[None, :], rho, 0.0)
    np.fill_diagonal(S, 1.0)
    return S


def block_source_classes(p, n, seed, block_size=25, rho=0.5):
    """Two zero-mean classes whose block correlation structures differ.

    Stands in for a two-class source dataset when exercising
    :func:`simulize`; returns ``(X_A, X_B)``.
    """
    seeds = np.random.SeedSequence(seed).spawn(4)
    X_A = sample_mvn(block_covariance(p, block_size, rho, seeds[0]), n, seeds[1])
    X_B = sample_mvn(block_covariance(p, block_size, rho, seeds[2]), n, seeds[3])
    return X_A, X_B


def ring_network(p, neighbors=2):
    """Unit-weight ring lattice joining each node to its ``neighbors``
    nearest successors and predecessors."""
    W = np.zeros((p, p))
    idx = np.arange(p)
    for k in range(1, neighbors + 1):
        W[idx, (idx + k) % p] = 1.0
        W[(idx + k) % p, idx] = 1.0
    return FeatureNetwork(W, None, "prior")


def blurred_two_class(p, n, seed, s0=-1.0, eps_rel=0.1, amplitude=0.3, neighbors=2):
    """Two Gaussian classes blurred by a Laplacian power on a ring network.

    A clean sample is ``y * mu / 2 + z`` with a random mean direction
    ``mu`` (entries ``N(0, amplitude^2)``) and white ``z``. The observed
    sample is ``(L + eps I)^s0`` applied to it, ``L`` being the standard
    Laplacian of :func:`ring_network` and ``eps = eps_rel * mean(eig(L))``.
    ``n`` samples are drawn per class.
    """
    L = build_laplacian(ring_network(p, neighbors), "standard")
    lam, _ = eigendecompose(L)
    eps = eps_rel * float(np.mean(lam))
    rng = np.random.default_rng(seed)
    mu = amplitude * rng.standard_normal(p)
    y = np.repeat([1, -1], n)
    clean = y[:, None] * mu[None, :] / 2.0 + rng.standard_normal((2 * n, p))
    return Dataset(laplacian_power_transform(L, clean, s0, eps), y)
