"""Masked graph convolution trained by backpropagation.

Layer ``k`` maps ``x_k`` (length ``d_k``) to ``x_{k+1} = g((W_k * M_k) x_k)``
where ``M_k`` is the 0/1 cluster-membership mask of the partition linking
the two layers: output node ``i`` only sees the inputs in cluster ``i``.
Training is plain gradient descent on the unmasked entries.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .clustering import Partition, SoftPartition
from .errors import DimensionMismatch, Divergence

ACTIVATIONS = ("sigmoid", "identity")
LOSSES = ("squared", "logistic")


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def cluster_mask(C) -> np.ndarray:
    """``d x p`` mask with ones at the members of each cluster."""
    if isinstance(C, SoftPartition):
        C = C.harden()
    M = np.zeros((C.d, C.p))
    M[C.assign, np.arange(C.p)] = 1.0
    return M


@dataclass
class TrainConfig:
    alpha: float = 0.1
    epochs: int = 100
    batch_size: int = 0
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("learning rate alpha must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass
class MaskedConvNet:
    """Stack of masked layers.

    ``weights[k]`` and ``masks[k]`` are ``d_{k+1} x d_k``; ``activations[k]``
    is the nonlinearity of layer ``k``. ``loss`` is ``"squared"`` (half the
    mean squared error on the final activation) or ``"logistic"`` (mean
    ``log(1 + exp(-y z))`` on the final pre-activation ``z`` with labels in
    ``{-1, +1}``).
    """

    weights: List[np.ndarray]
    masks: List[np.ndarray]
    activations: List[str] = field(default_factory=list)
    loss: str = "squared"

    def __post_init__(self):
        if len(self.weights) != len(self.masks):
            raise ValueError("need one mask per weight matrix")
        if not self.activations:
            self.activations = ["sigmoid"] * len(self.weights)
        if len(self.activations) != len(self.weights):
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        self.masks = [np.asarray(M, dtype=float) for M in self.masks]
        self.weights = [np.asarray(W, dtype=float) * M for W, M in zip(self.weights, self.masks)]
        for k, (W, M) in enumerate(zip(self.weights, self.masks)):
            if W.shape != M.shape:
                raise DimensionMismatch(f"layer {k}: weights {W.shape} vs mask {M.shape}")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise DimensionMismatch(f"layer {k} input size does not match layer {k - 1} output")

    @classmethod
    def from_partitions(cls, partitions, seed=0, init_scale=1.0, activations=None,
                        loss="squared"):
        """Masks from a list of partitions, weights uniform in
        ``[-s, s]`` at mask positions with ``s = init_scale / sqrt(|cluster|)``."""
        rng = np.random.default_rng(seed)
        weights, masks = [], []
        for C in partitions:
            M = cluster_mask(C)
            fan_in = M.sum(axis=1, keepdims=True)
            scale = init_scale / np.sqrt(fan_in)
            W = rng.uniform(-1.0, 1.0, size=M.shape) * scale * M
            weights.append(W)
            masks.append(M)
        return cls(weights, masks, list(activations or []), loss)

    @property
    def depth(self):
        return len(self.weights)

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_parameters(self):
        return int(sum(M.sum() for M in self.masks))

    def copy(self):
        return copy.deepcopy(self)

    def predict(self, X):
        return forward(self, X)[-1]


def _act(name, z):
    return sigmoid(z) if name == "sigmoid" else z


def _act_grad(name, out):
    return out * (1.0 - out) if name == "sigmoid" else np.ones_like(out)


def forward(net: MaskedConvNet, x0, return_pre=False):
    """All layer activations ``[X_0, ..., X_K]``.

    ``x0`` is a single input vector or an (n, d_0) matrix of row inputs.
    With ``return_pre`` the pre-activations are returned as well.
    """
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    X = np.atleast_2d(x0)
    if X.shape[1] != net.sizes[0]:
        raise DimensionMismatch(f"input has {X.shape[1]} features, net expects {net.sizes[0]}")
    outs, pres = [X], []
    for W, M, a in zip(net.weights, net.masks, net.activations):
        Z = outs[-1] @ (W * M).T
        pres.append(Z)
        outs.append(_act(a, Z))
    if single:
        outs = [o[0] for o in outs]
        pres = [z[0] for z in pres]
    return (outs, pres) if return_pre else outs


def loss_value(net: MaskedConvNet, X, y):
    outs, pres = forward(net, np.atleast_2d(X), return_pre=True)
    return _loss(net, outs[-1], pres[-1], _targets(y, outs[-1]))


def _targets(y, out):
    y = np.asarray(y, dtype=float)
    return y.reshape(out.shape) if y.size == out.size else y.reshape(-1, out.shape[1])


def _loss(net, out, z, Y):
    n = out.shape[0]
    if net.loss == "squared":
        return 0.5 * float(np.sum((out - Y) ** 2)) / n
    return float(np.sum(np.logaddexp(0.0, -Y * z))) / n


def backward(net: MaskedConvNet, activations, y, pre=None):
    """Gradients of the loss with respect to every ``W_k``.

    ``activations`` is the list returned by :func:`forward` (batch form).
    Each gradient is ``(delta_{k+1}^T X_k) * M_k``, so it vanishes at mask-0
    positions.
    """
    outs = [np.atleast_2d(o) for o in activations]
    n = outs[0].shape[0]
    Y = _targets(y, outs[-1])
    if net.loss == "squared":
        delta = (outs[-1] - Y) * _act_grad(net.activations[-1], outs[-1]) / n
    else:
        if pre is None:
            # recover the final pre-activation from the layer input
            z = outs[-2] @ (net.weights[-1] * net.masks[-1]).T
        else:
            z = np.atleast_2d(pre[-1])
        delta = -Y * sigmoid(-Y * z) / n
    grads = [None] * net.depth
    for k in range(net.depth - 1, -1, -1):
        M = net.masks[k]
        grads[k] = (delta.T @ outs[k]) * M
        if k:
            back = delta @ (net.weights[k] * M)
            delta = back * _act_grad(net.activations[k - 1], outs[k])
    return grads


def train(net: MaskedConvNet, X, y, config: TrainConfig = None):
    """Gradient descent ``W_k <- W_k - alpha * dJ/dW_k`` on masked weights.

    Full batch when ``config.batch_size`` is 0 (or at least ``n``); otherwise
    mini-batches over a seeded shuffle each epoch. Returns the trained copy
    and the loss trace (full-data loss before training and after each
    epoch). Raises :class:`Divergence` once the loss exceeds 1e6 times its
    initial value.
    """
    config = config or TrainConfig()
    net = net.copy()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    Y = y.reshape(X.shape[0], -1)
    n = X.shape[0]
    rng = np.random.default_rng(config.seed)
    batch = n if config.batch_size <= 0 else min(config.batch_size, n)
    start = loss_value(net, X, Y)
    trace = [start]
    limit = 1e6 * max(start, np.finfo(float).tiny)
    for _ in range(config.epochs):
        order = np.arange(n) if batch == n else rng.permutation(n)
        for lo in range(0, n, batch):
            rows = order[lo:lo + batch]
            outs, pres = forward(net, X[rows], return_pre=True)
            grads = backward(net, outs, Y[rows], pres)
            for k, g in enumerate(grads):
                net.weights[k] = (net.weights[k] - config.alpha * g) * net.masks[k]
        current = loss_value(net, X, Y)
        trace.append(current)
        if not np.isfinite(current) or current > limit:
            raise Divergence(f"loss grew from {start:.4g} to {current:.4g}")
    return net, np.array(trace)


@dataclass
class ConvNetClassifier:
    """Masked network over a cluster hierarchy with one output node.

    A final single-cluster layer is appended when the hierarchy does not
    already end with one node. Labels in ``{-1, +1}`` are trained with the
    logistic loss; the score is the final pre-activation.
    """

    partitions: list
    config: TrainConfig = field(default_factory=TrainConfig)
    net: MaskedConvNet = None
    trace: np.ndarray = None
    _mu: np.ndarray = None
    _sd: np.ndarray = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        parts = list(self.partitions)
        last = parts[-1].d if parts else X.shape[1]
        if last != 1:
            parts.append(Partition(np.zeros(last, dtype=int), 1))
        acts = ["sigmoid"] * (len(parts) - 1) + ["identity"]
        self._mu = X.mean(axis=0)
        sd = X.std(axis=0)
        self._sd = np.where(sd > 0, sd, 1.0)
        init = MaskedConvNet.from_partitions(parts, seed=self.config.seed,
                                             init_scale=self.config.init_scale,
                                             activations=acts, loss="logistic")
        self.net, self.trace = train(init, (X - self._mu) / self._sd, y, self.config)
        return self

    def decision_function(self, X):
        X = (np.atleast_2d(np.asarray(X, dtype=float)) - self._mu) / self._sd
        return forward(self.net, X)[-1][:, 0]
