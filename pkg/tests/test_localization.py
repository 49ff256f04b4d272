import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridworm.localization import (DecisionTree, NodeMetrics, Presorted, baseline_most_frequent,
                                   confusion, evaluate, fit, fit_many, gini, load_trees,
                                   mean_rows, predict_multi, save_trees, write_metrics_csv)


def brute_force_split(X, y):
    """Exhaustive best split: lowest weighted Gini, then lowest feature, then lowest threshold."""
    n, d = X.shape
    if y.min() == y.max():
        return None
    best = None
    for f in range(d):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = (lo + hi) / 2
            left = X[:, f] <= thr
            score = 0.0
            for part in (y[left], y[~left]):
                pos = part.sum()
                score += len(part) * (1 - (pos / len(part)) ** 2 - (1 - pos / len(part)) ** 2)
            if best is None or score < best[0] - 1e-9:
                best = (score, f, thr, left)
    return best


def random_instance(rng):
    n = int(rng.integers(2, 51))
    d = int(rng.integers(1, 6))
    if rng.random() < 0.5:
        X = rng.integers(0, 4, (n, d)).astype(float)  # many ties
    else:
        X = rng.normal(size=(n, d))
    y = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(np.int8)
    return X, y


def test_gini_examples():
    assert gini([5, 5]) == 0.5
    assert gini([10, 0]) == 0.0
    assert gini([3, 1]) == 0.375
    with pytest.raises(ValueError):
        gini([0, 0])


def test_root_split_matches_exhaustive_search():
    rng = np.random.default_rng(20240601)
    for _ in range(200):
        X, y = random_instance(rng)
        tree = fit(X, y)
        best = brute_force_split(X, y)
        if best is None:
            assert tree.node_count == 1
            continue
        score, f, thr, left = best
        assert tree.feature[0] == f
        assert np.array_equal(X[:, f] <= tree.threshold[0], left)


def test_separable_one_dimensional():
    X = np.array([[-3.0], [-2.0], [-1.0], [0.0], [1.0], [2.0]])
    y = (X[:, 0] >= 0).astype(np.int8)
    tree = fit(X, y)
    assert tree.node_count == 3 and tree.depth == 1
    assert -1.0 < tree.threshold[0] < 0.0
    assert np.array_equal(tree.predict(X), y)


def test_pure_root_is_a_leaf():
    tree = fit(np.random.default_rng(0).normal(size=(10, 3)), np.zeros(10, dtype=np.int8))
    assert tree.node_count == 1 and tree.depth == 0
    assert np.all(tree.predict(np.random.default_rng(1).normal(size=(20, 3))) == 0)


def test_identical_samples_with_mixed_labels():
    X = np.ones((5, 2))
    tree = fit(X, np.array([1, 1, 0, 1, 0], dtype=np.int8))
    assert tree.node_count == 1 and tree.value[0] == 1
    tie = fit(np.ones((4, 2)), np.array([1, 0, 1, 0], dtype=np.int8))
    assert tie.value[0] == 0


def test_xor_needs_depth_two():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0], dtype=np.int8)
    # no single axis-aligned split with constant leaves fits XOR
    for f in range(2):
        left = X[:, f] <= 0.5
        for a, b in itertools.product((0, 1), repeat=2):
            assert not np.array_equal(np.where(left, a, b), y)
    tree = fit(X, y)
    assert tree.depth >= 2
    assert np.array_equal(tree.predict(X), y)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 40), d=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_distinct_points_are_recovered(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (rng.random(n) < 0.5).astype(np.int8)
    tree = fit(X, y)
    assert np.array_equal(tree.predict(X), y)
    inner = tree.feature >= 0
    assert np.all(tree.left[inner] >= 0) and np.all(tree.right[inner] >= 0)
    assert np.all(np.isfinite(tree.threshold))
    assert set(np.unique(tree.value)) <= {0, 1}


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), f=st.integers(0, 2),
       kind=st.sampled_from(["cube", "exp", "affine"]))
def test_monotone_transform_invariance(seed, f, kind):
    rng = np.random.default_rng(seed)
    X = rng.integers(-3, 4, (30, 3)).astype(float)
    y = (rng.random(30) < 0.5).astype(np.int8)
    g = {"cube": lambda v: v ** 3, "exp": np.exp, "affine": lambda v: 2.5 * v - 7}[kind]
    Xt = X.copy()
    Xt[:, f] = g(X[:, f])
    a, b = fit(X, y), fit(Xt, y)
    assert np.array_equal(a.feature, b.feature)
    assert np.array_equal(a.n_pos, b.n_pos) and np.array_equal(a.n_neg, b.n_neg)
    # midpoint thresholds move under a non-linear map, so unseen values may route
    # differently; the partition of every training sample is what is invariant
    assert np.array_equal(a.predict(X), b.predict(Xt))
    assert np.array_equal(a.predict(X), y) == np.array_equal(b.predict(Xt), y)


def test_fit_many_matches_single_fits_and_round_trips(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(80, 6))
    Y = (rng.random((80, 3)) < 0.4).astype(np.int8)
    trees = fit_many(Presorted(X), Y)
    for k, t in enumerate(trees):
        single = fit(X, Y[:, k])
        assert np.array_equal(t.feature, single.feature)
        assert np.array_equal(t.threshold, single.threshold)
    out = predict_multi(trees, X)
    assert out.shape == (80, 3) and np.array_equal(out, Y)
    assert predict_multi(trees, X[0]).shape == (3,)
    save_trees(trees, tmp_path / "t.json", names=["a", "b", "c"])
    back = load_trees(tmp_path / "t.json")
    test = rng.normal(size=(200, 6))
    assert np.array_equal(predict_multi(back, test), predict_multi(trees, test))
    assert isinstance(DecisionTree.from_dict(trees[0].to_dict()), DecisionTree)


def test_predict_checks_width():
    tree = fit(np.zeros((3, 2)) + np.arange(3)[:, None], np.array([0, 1, 1], dtype=np.int8))
    with pytest.raises(ValueError):
        tree.predict(np.zeros((1, 3)))


def test_normacc_worked_example():
    m = NodeMetrics("x", TP=40, TN=50, FP=5, FN=5)
    assert m.acc == 0.9
    assert (m.n_pos, m.n_neg) == (45, 55)
    assert m.acc_B == 0.55
    assert abs(m.normacc - 7 / 9) < 1e-12
    assert abs(m.tpr - 40 / 45) < 1e-12 and abs(m.tnr - 50 / 55) < 1e-12


def test_normacc_anchors():
    y = np.array([0, 0, 1, 1, 0, 1, 0], dtype=np.int8)
    assert confusion(y, y).nodes[0].normacc == 1.0
    assert confusion(y, np.zeros_like(y)).nodes[0].normacc == 0.0
    assert math.isnan(confusion(np.zeros(4), np.zeros(4)).nodes[0].normacc)


def test_baseline_classifier():
    y = np.array([0] * 60 + [1] * 40, dtype=np.int8)
    base = baseline_most_frequent(y)
    assert base.classes == (0,)
    assert np.all(base.predict(np.zeros((7, 2))) == 0)
    assert baseline_most_frequent(np.array([0, 1, 0, 1])).classes == (0,)
    rep = evaluate(base, np.zeros((100, 2)), y[:, None])
    assert abs(rep.nodes[0].normacc) <= 1e-12
    with pytest.raises(ValueError):
        evaluate(base, np.zeros((0, 2)), np.zeros((0, 1)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_metric_invariants(pairs):
    t, p = np.array(pairs).T
    m = confusion(t, p).nodes[0]
    assert m.TP + m.TN + m.FP + m.FN == len(pairs)
    assert 0 <= m.acc <= 1
    assert math.isnan(m.normacc) or m.normacc <= 1
    for v in (m.tpr, m.tnr):
        assert math.isnan(v) or 0 <= v <= 1


def test_mean_rows_and_csv(tmp_path):
    a = confusion(np.array([[1, 0], [0, 1]]), np.array([[1, 0], [1, 1]]), ["n1", "n2"])
    b = confusion(np.array([[1, 0], [0, 0]]), np.array([[1, 0], [0, 0]]), ["n1", "n2"])
    rows = mean_rows([a, b])
    assert rows[0]["node"] == "n1" and rows[0]["TP"] == 2
    assert rows[0]["acc"] == (a.nodes[0].acc + b.nodes[0].acc) / 2
    write_metrics_csv(rows, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "node,TP,TN,FP,FN,acc,acc_B,normacc,tpr,tnr"
    assert len(lines) == 3
