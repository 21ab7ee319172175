import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from featnet.clustering import ward_clusters
from featnet.datasim import (
    Dataset,
    SimulizeConfig,
    block_source_classes,
    blurred_two_class,
    concat_classes,
    load_dataset,
    mixed_covariances,
    planted_two_class,
    ring_network,
    sample_mvn,
    save_dataset,
    simulize,
)
from featnet.errors import InvalidBlockSpec, LabelMismatch, NonFinite, ParseError, PSDRepairFailed
from featnet.evaluation import CVPlan, PipelineSpec, adjusted_rand_index, cross_validate
from featnet.network import correlation_network


def test_load_small_csv_with_label_file(tmp_path):
    (tmp_path / "m.csv").write_text("g1,g2\n1.0,2.0\n3.0,4.5\n")
    (tmp_path / "l.csv").write_text("sample_id,label\ns0,A\ns1,B\n")
    ds = load_dataset(tmp_path / "m.csv", tmp_path / "l.csv")
    assert (ds.n, ds.p) == (2, 2)
    assert list(ds.y) == [1, -1]
    assert ds.feature_ids == ("g1", "g2")


def test_load_label_column(tmp_path):
    (tmp_path / "m.csv").write_text("sample_id,g1,class\na,1.5,B\nb,2.5,A\nc,0.5,A\n")
    ds = load_dataset(tmp_path / "m.csv", label_column="class")
    assert ds.sample_ids == ("a", "b", "c") and list(ds.y) == [-1, 1, 1]
    assert ds.X[:, 0].tolist() == [1.5, 2.5, 0.5]


def test_load_rejects_inf_naming_cell(tmp_path):
    (tmp_path / "m.csv").write_text("g1,g2\n1.0,2.0\n3.0,inf\n")
    (tmp_path / "l.csv").write_text("s0,A\ns1,B\n")
    with pytest.raises(NonFinite) as err:
        load_dataset(tmp_path / "m.csv", tmp_path / "l.csv")
    assert err.value.cell == (1, 1)


def test_load_errors(tmp_path):
    (tmp_path / "m.csv").write_text("g1,y\n1.0,A\n3.0\n")
    with pytest.raises(ParseError) as err:
        load_dataset(tmp_path / "m.csv", label_column="y")
    assert err.value.line == 3
    (tmp_path / "ok.csv").write_text("g1\n1.0\n2.0\n")
    (tmp_path / "short.csv").write_text("s0,A\n")
    with pytest.raises(LabelMismatch):
        load_dataset(tmp_path / "ok.csv", tmp_path / "short.csv")
    (tmp_path / "bad.csv").write_text("s0,A\ns1,C\n")
    with pytest.raises(LabelMismatch):
        load_dataset(tmp_path / "ok.csv", tmp_path / "bad.csv")


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(7, 4)) * 1e3, np.array([1, -1, 1, 1, -1, -1, 1]))
    save_dataset(ds, tmp_path / "m.csv", tmp_path / "l.csv")
    back = load_dataset(tmp_path / "m.csv", tmp_path / "l.csv")
    assert np.max(np.abs(back.X - ds.X)) <= 1e-15 * np.max(np.abs(ds.X))
    assert np.array_equal(back.y, ds.y) and back.sample_ids == ds.sample_ids


def test_dataset_validation():
    with pytest.raises(LabelMismatch):
        Dataset(np.zeros((2, 2)), np.array([1, 0]))
    with pytest.raises(NonFinite):
        Dataset(np.array([[0.0, np.nan]]), np.array([1]))


def test_sample_mvn_moments_and_determinism():
    Z = sample_mvn(np.eye(3), 10_000, 1)
    C = np.cov(Z, rowvar=False)
    assert np.max(np.abs(C - np.diag(np.diag(C)))) < 0.1
    v = sample_mvn(np.diag([4.0, 1.0]), 10_000, 2).var(axis=0)
    assert np.all(np.abs(v / [4.0, 1.0] - 1) < 0.1)
    assert np.array_equal(sample_mvn(np.eye(3), 5, 7), sample_mvn(np.eye(3), 5, 7))


def test_sample_mvn_repairs_semidefinite_and_fails_on_indefinite():
    v = np.array([1.0, 2.0, -1.0])
    Z = sample_mvn(np.outer(v, v), 4, 0)
    assert np.all(np.isfinite(Z))
    with pytest.raises(PSDRepairFailed):
        sample_mvn(np.diag([1.0, -1.0]), 3, 0)


def test_mixed_covariance_endpoints():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4))
    B = rng.normal(size=(4, 4))
    S_A, S_B = A @ A.T, B @ B.T
    S_1, S_2 = mixed_covariances(S_A, S_B, 0.0)
    assert np.array_equal(S_1, S_B) and np.array_equal(S_2, S_A)
    S_1, S_2 = mixed_covariances(S_A, S_B, 0.5)
    assert np.array_equal(S_1, S_2)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 2 ** 32 - 1))
def test_mixing_swap_symmetry(b, seed):
    # exact whenever 1 - b is representable, so that b and 1 - b are true complements
    assume(1.0 - (1.0 - b) == b)
    rng = np.random.default_rng(seed)
    S_A, S_B = rng.normal(size=(2, 5, 5))
    one, two = mixed_covariances(S_A, S_B, b)
    one_c, two_c = mixed_covariances(S_A, S_B, 1.0 - b)
    assert np.array_equal(one, two_c) and np.array_equal(two, one_c)


def test_simulize_shapes_labels_and_determinism():
    X_A, X_B = block_source_classes(60, 80, seed=1, block_size=10)
    cfg = SimulizeConfig(b=0.3, n_per_class=50, p_sub=30, seed=5)
    one, two = simulize(X_A, X_B, cfg)
    assert one.X.shape == (50, 30) and two.X.shape == (50, 30)
    assert np.all(one.y == 1) and np.all(two.y == -1)
    assert one.feature_ids == two.feature_ids
    again = simulize(X_A, X_B, cfg)
    assert np.array_equal(one.X, again[0].X) and np.array_equal(two.X, again[1].X)
    with pytest.raises(ValueError):
        simulize(X_A, X_B, SimulizeConfig(p_sub=61))


def test_simulize_class_covariance_converges():
    X_A, X_B = block_source_classes(200, 300, seed=2)
    cfg = SimulizeConfig(b=0.3, n_per_class=3000, p_sub=200, seed=3)
    one, _ = simulize(X_A, X_B, cfg)
    S_1, _ = mixed_covariances(np.cov(X_A, rowvar=False), np.cov(X_B, rowvar=False), 0.3)
    err = np.max(np.abs(np.cov(one.X, rowvar=False) - S_1))
    assert err < 0.15 * np.max(np.abs(S_1))


@pytest.mark.slow
def test_simulize_equal_mixture_is_unlearnable():
    X_A, X_B = block_source_classes(40, 200, seed=4, block_size=10)
    scores = []
    for seed in range(10):
        one, two = simulize(X_A, X_B, SimulizeConfig(b=0.5, n_per_class=300, p_sub=20, seed=seed))
        rep = cross_validate(concat_classes(one, two), PipelineSpec("1nn"), CVPlan(10, True, seed))
        scores.append(rep.balanced_accuracy)
    assert abs(np.mean(scores) - 0.5) <= 0.05


def test_planted_noise_free_blocks_fully_correlated():
    ds = planted_two_class(12, 3, 0.0, 30, seed=0, contrast=0.0)
    W = correlation_network(ds.X).W
    same = ds.blocks.assign[:, None] == ds.blocks.assign[None, :]
    off = same & ~np.eye(12, dtype=bool)
    assert np.allclose(W[off], 1.0, atol=1e-12)


def test_planted_block_spec_errors():
    with pytest.raises(InvalidBlockSpec):
        planted_two_class(10, 3, 1.0, 5, seed=0)
    with pytest.raises(InvalidBlockSpec):
        planted_two_class(10, [4, 5], 1.0, 5, seed=0)
    ds = planted_two_class(10, [4, 6], 1.0, 5, seed=0)
    assert list(ds.blocks.sizes()) == [4, 6] and ds.n == 10


def test_planted_huge_noise_is_chance():
    scores = []
    for seed in range(3):
        ds = planted_two_class(40, 4, 1e3, 100, seed=seed)
        scores.append(cross_validate(ds, PipelineSpec("linear-svm"), CVPlan(10, True, seed)).balanced_accuracy)
    assert abs(np.mean(scores) - 0.5) <= 0.05


def test_planted_blocks_recovered_by_ward():
    for seed in range(10):
        ds = planted_two_class(40, 5, 0.3, 100, seed=seed)
        P = ward_clusters(correlation_network(ds.X, "absolute"), 5)
        assert adjusted_rand_index(P.assign, ds.blocks.assign) >= 0.9


def test_planted_and_blurred_deterministic():
    a = planted_two_class(20, 4, 1.0, 10, seed=9)
    b = planted_two_class(20, 4, 1.0, 10, seed=9)
    assert np.array_equal(a.X, b.X)
    c = blurred_two_class(20, 10, seed=9)
    d = blurred_two_class(20, 10, seed=9)
    assert np.array_equal(c.X, d.X) and np.all(np.isfinite(c.X))


def test_ring_network_degrees():
    G = ring_network(10, 2)
    assert np.all(G.W.sum(axis=1) == 4) and np.array_equal(G.W, G.W.T)
