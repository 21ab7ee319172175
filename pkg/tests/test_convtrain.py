import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featnet.clustering import Partition
from featnet.convtrain import (
    ConvNetClassifier,
    MaskedConvNet,
    TrainConfig,
    backward,
    cluster_mask,
    forward,
    loss_value,
    train,
)
from featnet.errors import DimensionMismatch, Divergence
from featnet.hierarchy import average_pool

import oracles


def random_partition(rng, p, d):
    return Partition(rng.permutation(np.concatenate([np.arange(d), rng.integers(0, d, size=p - d)])), d)


def random_chain(rng, depth, top=20):
    sizes = [int(rng.integers(4, top + 1))]
    for _ in range(depth):
        sizes.append(int(rng.integers(1, sizes[-1] + 1)))
    return [random_partition(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]


def test_mask_rows_are_clusters():
    C = Partition([1, 0, 1, 2, 0])
    M = cluster_mask(C)
    for i, members in enumerate(C.clusters()):
        assert np.array_equal(np.flatnonzero(M[i]), members)


def test_identity_forward_is_average_pooling():
    rng = np.random.default_rng(0)
    parts = random_chain(rng, 3)
    masks = [cluster_mask(C) for C in parts]
    weights = [M / M.sum(axis=1, keepdims=True) for M in masks]
    net = MaskedConvNet(weights, masks, ["identity"] * 3)
    x = rng.normal(size=parts[0].p)
    pooled = x
    for C in parts:
        pooled = average_pool(pooled, C)
    # the two routes sum in different orders, so allow a few ulps
    assert np.max(np.abs(forward(net, x)[-1] - pooled)) <= 8 * np.finfo(float).eps * np.max(np.abs(x))


def test_zero_weights_sigmoid_gives_half():
    parts = random_chain(np.random.default_rng(1), 2)
    net = MaskedConvNet([np.zeros_like(cluster_mask(C)) for C in parts], [cluster_mask(C) for C in parts])
    outs = forward(net, np.ones(parts[0].p))
    assert all(np.all(o == 0.5) for o in outs[1:])


def test_forward_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    for _ in range(10):
        parts = random_chain(rng, 3)
        net = MaskedConvNet.from_partitions(parts, seed=int(rng.integers(1000)),
                                            activations=["sigmoid", "identity", "sigmoid"])
        x = rng.normal(size=parts[0].p)
        ours = forward(net, x)
        ref = oracles.masked_forward(net.weights, net.masks, net.activations, x)
        for a, b in zip(ours, ref):
            assert np.max(np.abs(a - np.array(b))) <= 1e-12


def test_forward_dimension_check():
    net = MaskedConvNet.from_partitions([Partition([0, 0, 1])])
    with pytest.raises(DimensionMismatch):
        forward(net, np.ones(4))


def test_singleton_identity_chain_is_diagonal():
    rng = np.random.default_rng(3)
    net = MaskedConvNet.from_partitions([Partition(np.arange(5))] * 2, seed=4,
                                        activations=["identity", "identity"])
    assert all(np.array_equal(W, np.diag(np.diag(W))) for W in net.weights)
    x = rng.normal(size=5)
    assert np.allclose(forward(net, x)[-1], np.diag(net.weights[1]) * np.diag(net.weights[0]) * x, rtol=1e-15)


def test_linear_regression_gradient_closed_form():
    rng = np.random.default_rng(5)
    M = np.array([[1.0, 0.0, 1.0, 1.0]])
    net = MaskedConvNet([rng.normal(size=(1, 4))], [M], ["identity"])
    x = rng.normal(size=4)
    y = 0.7
    (g,) = backward(net, forward(net, x[None, :]), np.array([[y]]))
    yhat = float(net.weights[0][0] @ x)
    assert np.allclose(g, (yhat - y) * x[None, :] * M, rtol=1e-14)


def test_zero_mask_row_has_zero_gradient():
    M = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    net = MaskedConvNet([np.ones((2, 3))], [M])
    X = np.random.default_rng(6).normal(size=(4, 3))
    (g,) = backward(net, forward(net, X), np.zeros((4, 2)))
    assert np.all(g[1] == 0) and np.all(g[:, 2] == 0)


def _check_gradients(rng, net, n=5):
    X = rng.normal(size=(n, net.sizes[0]))
    d = net.sizes[-1]
    if net.loss == "logistic":
        Y = np.where(rng.random((n, d)) < 0.5, 1.0, -1.0)
    else:
        Y = rng.random((n, d))
    outs, pres = forward(net, X, return_pre=True)
    grads = backward(net, outs, Y, pres)
    fd = oracles.finite_difference_grads(
        lambda ws: oracles.extended_loss(ws, net.masks, net.activations, net.loss, X, Y),
        net.weights, net.masks, h=1e-5)
    worst = 0.0
    for g, f, M in zip(grads, fd, net.masks):
        assert np.all(g[M == 0] == 0)
        worst = max(worst, float(oracles.relative_errors(g[M > 0], f[M > 0]).max()))
    return worst


@pytest.mark.parametrize("loss", ["squared", "logistic"])
def test_random_two_layer_gradient_check(loss):
    rng = np.random.default_rng(7)
    for _ in range(10):
        net = MaskedConvNet.from_partitions(random_chain(rng, 2), seed=int(rng.integers(1000)),
                                            init_scale=2.0, loss=loss)
        assert _check_gradients(rng, net) <= 1e-5


def test_backward_recovers_preactivation_when_missing():
    rng = np.random.default_rng(8)
    net = MaskedConvNet.from_partitions(random_chain(rng, 2), seed=1, loss="logistic")
    X = rng.normal(size=(3, net.sizes[0]))
    Y = np.ones((3, net.sizes[-1]))
    outs, pres = forward(net, X, return_pre=True)
    for a, b in zip(backward(net, outs, Y), backward(net, outs, Y, pres)):
        assert np.allclose(a, b, rtol=1e-14, atol=0)


def _masked_least_squares(X, Y, M):
    W = np.zeros(M.shape)
    for i in range(M.shape[0]):
        cols = np.flatnonzero(M[i])
        W[i, cols] = np.linalg.solve(X[:, cols].T @ X[:, cols], X[:, cols].T @ Y[:, i])
    return W


def test_single_linear_layer_reaches_normal_equations():
    rng = np.random.default_rng(9)
    C = Partition([0, 1, 0, 2, 1, 2, 0])
    M = cluster_mask(C)
    X = rng.normal(size=(60, 7))
    Y = rng.normal(size=(60, 3))
    net = MaskedConvNet([np.zeros_like(M)], [M], ["identity"])
    trained, trace = train(net, X, Y, TrainConfig(alpha=0.3, epochs=3000))
    assert np.max(np.abs(trained.weights[0] - _masked_least_squares(X, Y, M))) <= 1e-4
    assert np.all(np.diff(trace) <= 1e-15)


def test_zero_learning_rate_keeps_net():
    rng = np.random.default_rng(10)
    net = MaskedConvNet.from_partitions(random_chain(rng, 2), seed=2)
    X = rng.normal(size=(8, net.sizes[0]))
    trained, trace = train(net, X, rng.random((8, net.sizes[-1])), TrainConfig(alpha=0.0, epochs=5))
    assert all(np.array_equal(a, b) for a, b in zip(trained.weights, net.weights))
    assert len(trace) == 6 and np.all(trace == trace[0])


def test_teacher_student_recovery():
    rng = np.random.default_rng(11)
    C = Partition(np.repeat(np.arange(4), 3))
    M = cluster_mask(C)
    teacher = rng.normal(size=M.shape) * M
    X = rng.normal(size=(200, 12))
    Y = X @ teacher.T
    student = MaskedConvNet.from_partitions([C], seed=3, activations=["identity"])
    trained, _ = train(student, X, Y, TrainConfig(alpha=0.5, epochs=500))
    assert np.max(np.abs(trained.weights[0] - teacher)[M > 0]) <= 1e-3


def test_divergence_detected():
    rng = np.random.default_rng(12)
    net = MaskedConvNet.from_partitions([Partition([0, 0, 0])], seed=0, activations=["identity"])
    X = rng.normal(size=(10, 3)) * 10
    with pytest.raises(Divergence):
        train(net, X, rng.random((10, 1)), TrainConfig(alpha=5.0, epochs=200))


def test_minibatch_is_seed_deterministic():
    rng = np.random.default_rng(13)
    net = MaskedConvNet.from_partitions(random_chain(rng, 2), seed=5)
    X = rng.normal(size=(30, net.sizes[0]))
    Y = rng.random((30, net.sizes[-1]))
    cfg = TrainConfig(alpha=0.2, epochs=5, batch_size=7, seed=9)
    a, ta = train(net, X, Y, cfg)
    b, tb = train(net, X, Y, cfg)
    assert np.array_equal(ta, tb)
    assert all(np.array_equal(u, v) for u, v in zip(a.weights, b.weights))


def test_parameter_count():
    parts = [Partition([0, 0, 1, 1, 1, 2]), Partition([0, 0, 0])]
    net = MaskedConvNet.from_partitions(parts)
    assert net.n_parameters == 6 + 3
    assert net.n_parameters <= sum(M.size for M in net.masks)
    full = MaskedConvNet.from_partitions([Partition([0, 0, 0, 0])])
    assert full.n_parameters == full.masks[0].size


def test_classifier_learns_shifted_classes():
    rng = np.random.default_rng(14)
    y = np.repeat([1, -1], 40)
    X = rng.normal(size=(80, 8)) + 0.8 * y[:, None]
    clf = ConvNetClassifier([Partition(np.repeat(np.arange(4), 2))], TrainConfig(alpha=0.5, epochs=200))
    clf.fit(X, y)
    assert clf.trace[-1] < clf.trace[0]
    assert np.mean(np.sign(clf.decision_function(X)) == y) > 0.85


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3), st.sampled_from(["squared", "logistic"]))
def test_masks_preserved_through_training(seed, depth, loss):
    rng = np.random.default_rng(seed)
    net = MaskedConvNet.from_partitions(random_chain(rng, depth, top=10), seed=seed % 1000, loss=loss)
    X = rng.normal(size=(6, net.sizes[0]))
    Y = np.where(rng.random((6, net.sizes[-1])) < 0.5, 1.0, -1.0)
    trained, trace = train(net, X, Y, TrainConfig(alpha=0.1, epochs=3))
    for W, M in zip(trained.weights, trained.masks):
        assert np.all(W[M == 0] == 0)
    assert trace[0] == loss_value(net, X, Y)
