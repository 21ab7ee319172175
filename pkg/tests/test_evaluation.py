import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featnet.datasim import Dataset, planted_two_class
from featnet.errors import FoldTooSmall, SingleClass
from featnet.evaluation import (
    CVPlan,
    LaplacianPowerFeatures,
    MarginClassifier,
    MetricReport,
    PipelineSpec,
    adjusted_rand_index,
    auroc,
    balanced_accuracy,
    cross_validate,
    grid_search_s,
    s_order,
)

import oracles


def test_balanced_accuracy_hand_cases():
    y = np.array([1, 1, 1, 1, -1, -1, -1, -1])
    assert balanced_accuracy(y, y) == 1.0
    assert balanced_accuracy(np.ones(8), y) == 0.5
    pred = np.array([1, 1, 1, -1, -1, -1, 1, 1])
    assert balanced_accuracy(pred, y) == 0.625
    with pytest.raises(SingleClass):
        balanced_accuracy(np.ones(3), np.ones(3))


def test_auroc_hand_cases():
    y = np.array([-1, -1, 1, 1])
    assert auroc([1, 2, 3, 4], y) == 1.0
    assert auroc([5, 5, 5, 5], y) == 0.5
    assert auroc([1, 2, 2, 3], y) == 0.875
    with pytest.raises(SingleClass):
        auroc([1, 2], [1, 1])


def test_auroc_matches_pair_count():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        y = np.where(rng.random(n) < 0.5, 1, -1)
        y[0], y[1] = 1, -1
        s = rng.integers(0, 6, size=n).astype(float)
        assert auroc(s, y) == oracles.auroc_pairs(s, y)


def test_adjusted_rand_index():
    assert adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert adjusted_rand_index([0, 0, 0, 0], [0, 0, 0, 0]) == 1.0
    assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) < 0


def test_stratified_folds_balanced_and_complete():
    y = np.array([1] * 23 + [-1] * 17)
    folds = CVPlan(10, True, 3).folds(y)
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(40))
    for f in folds:
        assert abs(np.sum(y[f] == 1) - 2.3) <= 1 and abs(np.sum(y[f] == -1) - 1.7) <= 1
    with pytest.raises(FoldTooSmall):
        CVPlan(10).folds(np.array([1] * 20 + [-1] * 9))


def test_constant_pipeline_is_half():
    ds = planted_two_class(10, 2, 1.0, 20, seed=0)
    assert cross_validate(ds, PipelineSpec("constant")).balanced_accuracy == 0.5


def test_nearest_neighbor_on_duplicates():
    rng = np.random.default_rng(1)
    base = rng.normal(size=(20, 3))
    y = np.repeat([1, -1], 10)
    ds = Dataset(np.vstack([base] * 4), np.concatenate([y] * 4))
    plan = CVPlan(3, True, 0)
    # every test row must keep a copy on the training side
    for test in plan.folds(ds.y):
        assert set(np.arange(80)[test] % 20) <= set(np.setdiff1d(np.arange(80), test) % 20)
    assert cross_validate(ds, PipelineSpec("1nn"), plan).balanced_accuracy == 1.0


def test_cross_validate_is_deterministic_and_thread_independent():
    ds = planted_two_class(20, 4, 1.0, 20, seed=2)
    spec = PipelineSpec("pool", {"sizes": [5]})
    a = cross_validate(ds, spec, CVPlan(5, True, 7))
    b = cross_validate(ds, spec, CVPlan(5, True, 7))
    c = cross_validate(ds, spec, CVPlan(5, True, 7), threads=3)
    assert a.to_csv() == b.to_csv() == c.to_csv()


def test_feature_blind_pipeline_is_chance():
    scores = []
    for seed in range(20):
        ds = planted_two_class(10, 2, 0.1, 30, seed=seed)
        scores.append(cross_validate(ds, PipelineSpec("random"), CVPlan(10, True, seed)).balanced_accuracy)
    se = np.std(scores) / np.sqrt(len(scores))
    assert abs(np.mean(scores) - 0.5) <= 3 * max(se, 0.02)


class _Spy:
    seen = []

    def fit(self, X, y):
        _Spy.seen.append(("fit", X.copy()))
        return self

    def decision_function(self, X):
        _Spy.seen.append(("score", X.copy()))
        return np.zeros(len(X))


def test_test_rows_never_reach_fit(monkeypatch):
    from featnet import evaluation

    monkeypatch.setitem(evaluation.PIPELINES, "spy", lambda p, seed: _Spy())
    X = np.arange(40, dtype=float).reshape(20, 2)
    ds = Dataset(X, np.repeat([1, -1], 10))
    plan = CVPlan(5, True, 0)
    _Spy.seen = []
    cross_validate(ds, PipelineSpec("spy"), plan)
    folds = plan.folds(ds.y)
    fits = [x for kind, x in _Spy.seen if kind == "fit"]
    scores = [x for kind, x in _Spy.seen if kind == "score"]
    for test, fitted, scored in zip(folds, fits, scores):
        assert not set(fitted[:, 0]) & set(X[test, 0])
        assert set(scored[:, 0]) == set(X[test, 0])


def test_all_pipelines_build_and_run():
    ds = planted_two_class(12, 3, 0.5, 15, seed=4)
    plan = CVPlan(3, True, 0)
    specs = [
        PipelineSpec("linear-svm"), PipelineSpec("rbf-svm"), PipelineSpec("constant"),
        PipelineSpec("random"), PipelineSpec("1nn"), PipelineSpec("pool", {"sizes": [4, 2]}),
        PipelineSpec("svm-bag", {"sizes": [4]}), PipelineSpec("smoothness"),
        PipelineSpec("multiscale-smoothness", {"n_clusters": 3}), PipelineSpec("regularize", {"s": 0.5}),
        PipelineSpec("conv-train", {"sizes": [4], "epochs": 20}),
    ]
    for spec in specs:
        rep = cross_validate(ds, spec, plan)
        assert rep.fold_balanced_accuracy.shape == (3,)
        assert np.all((rep.fold_auroc >= 0) & (rep.fold_auroc <= 1))
    with pytest.raises(ValueError):
        PipelineSpec("nope")


def test_metric_report_csv_and_table(tmp_path):
    rep = MetricReport(np.array([0.5, 1.0]), np.array([0.75, 1.0]), "x")
    text = rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == text
    assert text.splitlines()[0] == "fold,balanced_accuracy,auroc"
    assert "mean,0.75,0.875" in text
    assert "mean" in rep.table()


def test_s_order_tie_break():
    assert sorted([0.5, -0.5, 0.0, 1.0, -0.25], key=s_order) == [0.0, -0.25, -0.5, 0.5, 1.0]


def test_grid_zero_equals_duplicated_benchmark():
    ds = planted_two_class(10, 2, 1.0, 20, seed=5)
    plan = CVPlan(4, True, 1)
    grid = grid_search_s(ds, [0.0], plan=plan, base="linear-svm")
    dup = Dataset(np.hstack([ds.X, ds.X]), ds.y)
    bench = cross_validate(dup, PipelineSpec("linear-svm"), plan)
    assert np.max(np.abs(grid.reports[0.0].fold_balanced_accuracy - bench.fold_balanced_accuracy)) <= 1e-12
    assert grid.best_s == 0.0


def test_grid_tie_goes_to_negative(monkeypatch):
    from featnet import evaluation

    class Flat:
        def fit(self, X, y):
            return self

        def decision_function(self, X):
            return np.zeros(len(X))

    monkeypatch.setattr(evaluation, "_base_classifier", lambda *a: Flat())
    ds = planted_two_class(10, 2, 1.0, 20, seed=6)
    res = grid_search_s(ds, [0.5, -0.5], plan=CVPlan(3, True, 0))
    assert res.best_s == -0.5


def test_power_features_double_width():
    ds = planted_two_class(8, 2, 1.0, 10, seed=7)
    F = LaplacianPowerFeatures().fit(ds.X, ds.y)
    assert F.transform(ds.X, 0.5).shape == (20, 16)
    assert np.array_equal(F.transform(ds.X, 0.0), np.hstack([ds.X, ds.X]))


def test_margin_classifier_standardises():
    rng = np.random.default_rng(8)
    y = np.repeat([1, -1], 20)
    X = (rng.normal(size=(40, 3)) + 0.5 * y[:, None]) * 1e4
    a = MarginClassifier().fit(X, y)
    b = MarginClassifier().fit(X / 1e4, y)
    # equal up to the solver tolerance
    assert np.max(np.abs(a.decision_function(X) - b.decision_function(X / 1e4))) <= 1e-3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=2, max_size=40), st.integers(0, 2 ** 32 - 1))
def test_metric_symmetries(scores, seed):
    s = np.array(scores, dtype=float)
    y = np.where(np.random.default_rng(seed).random(s.size) < 0.5, 1, -1)
    y[0], y[1] = 1, -1
    assert auroc(s, y) + auroc(-s, y) == 1.0
    pred = np.where(s > 0, 1, -1)
    assert balanced_accuracy(pred, y) == balanced_accuracy(-pred, -y)
