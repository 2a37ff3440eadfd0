import itertools

import numpy as np
import pytest

from symlab.forest import (
    as_features,
    grow_tree,
    leaf_distributions,
    predict,
    predict_proba,
    train_decision_forest,
    tree_votes,
)


def brute_split(X, y, n_classes):
    """Exhaustive best Gini split: every feature, every midpoint, plain loops."""

    def weighted_gini(labels):
        if not labels:
            return 0.0
        p = np.bincount(labels, minlength=n_classes) / len(labels)
        return len(labels) * (1 - np.sum(p**2))

    best = (np.inf, -1, 0.0)
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f]))
        for lo, hi in zip(values, values[1:]):
            thr = 0.5 * (lo + hi)
            score = weighted_gini(list(y[X[:, f] <= thr])) + weighted_gini(list(y[X[:, f] > thr]))
            if score < best[0] - 1e-12:
                best = (score, f, thr)
    return best


@pytest.fixture
def blobs(rng):
    centers = np.array([[0, 0], [3, 0], [0, 3], [3, 3]])
    y = rng.integers(0, 4, 600)
    return centers[y] + rng.normal(scale=0.9, size=(600, 2)), y


@pytest.mark.parametrize("seed", range(5))
def test_root_split_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    X = as_features(rng.normal(size=(40, 3)))
    y = rng.integers(0, 3, 40)
    score, f, thr = brute_split(X, y, 3)
    tree = grow_tree(X, y, max_depth=1, n_classes=3)
    assert (tree.feature[0], tree.threshold[0]) == (f, pytest.approx(thr))


def test_separable_data_needs_one_split():
    X = np.array([[0.1], [0.2], [0.3], [0.7], [0.8], [0.9]])
    y = np.array([0, 0, 0, 1, 1, 1])
    tree = grow_tree(X, y, max_depth=5, n_classes=2)
    assert tree.node_count == 3 and tree.threshold[0] == pytest.approx(0.5)
    np.testing.assert_array_equal(np.argmax(leaf_distributions(tree, X, 5), axis=1), y)


def test_depth_zero_predicts_majority(blobs):
    X, y = blobs
    forest = train_decision_forest(X, y, trees=1, max_depth=0)
    pred = predict(forest, X)
    counts = np.bincount(forest.trees[0].counts.argmax(axis=1), minlength=4)
    assert len(set(pred)) == 1 and counts.sum() == 1
    assert forest.trees[0].node_count == 1


def test_tie_goes_to_lowest_class():
    X = np.array([[0.0], [1.0]])
    forest = train_decision_forest(X, [2, 1], trees=1, max_depth=0, n_classes=3)
    proba = predict_proba(forest, X)
    if proba[0, 1] == proba[0, 2]:
        assert predict(forest, X)[0] == 1


def test_deterministic_and_thread_invariant(blobs):
    X, y = blobs
    a = train_decision_forest(X, y, trees=12, max_depth=6, seed=3, threads=1)
    b = train_decision_forest(X, y, trees=12, max_depth=6, seed=3, threads=4)
    for ta, tb in zip(a.trees, b.trees):
        np.testing.assert_array_equal(ta.feature, tb.feature)
        np.testing.assert_array_equal(ta.threshold, tb.threshold)
    np.testing.assert_array_equal(predict_proba(a, X), predict_proba(b, X))
    c = train_decision_forest(X, y, trees=12, max_depth=6, seed=4)
    assert not np.array_equal(predict_proba(a, X), predict_proba(c, X))


@pytest.mark.parametrize("depth", [0, 1, 3, 5])
def test_truncation_equals_shallower_forest(blobs, depth):
    X, y = blobs
    deep = train_decision_forest(X, y, trees=8, max_depth=9, seed=1)
    shallow = train_decision_forest(X, y, trees=8, max_depth=depth, seed=1)
    np.testing.assert_array_equal(predict_proba(deep, X, depth), predict_proba(shallow, X))
    np.testing.assert_array_equal(tree_votes(deep, X, depth), tree_votes(shallow, X))


def test_training_accuracy_monotone_in_depth(blobs):
    X, y = blobs
    tree = grow_tree(X, y, max_depth=12)
    acc = [np.mean(np.argmax(leaf_distributions(tree, as_features(X), d), axis=1) == y) for d in range(13)]
    assert all(b >= a for a, b in itertools.pairwise(acc))
    assert acc[-1] == 1.0


def test_soft_and_hard_votes(blobs):
    X, y = blobs
    forest = train_decision_forest(X, y, trees=20, max_depth=4)
    votes = tree_votes(forest, X)
    assert np.all(votes.sum(axis=1) == 20)
    np.testing.assert_allclose(predict_proba(forest, X).sum(axis=1), 1.0)
    for vote in ("soft", "hard"):
        assert np.mean(predict(forest, X, vote=vote) == y) > 0.7
    with pytest.raises(ValueError):
        predict(forest, X, vote="median")


def test_float32_rounding_merges_near_duplicates():
    X = np.array([[0.3], [0.3 + 1e-15], [0.9]])
    tree = grow_tree(X, np.array([0, 1, 1]), max_depth=3, n_classes=2)
    assert tree.node_count == 3  # only the 0.3 | 0.9 gap is a split point


@pytest.mark.parametrize(
    "args",
    [
        (np.zeros((0, 2)), np.zeros(0)),
        (np.zeros((3, 2)), np.array([0, 1, 4])),
        (np.array([[np.nan, 0.0]]), np.array([0])),
        (np.zeros((3, 2)), np.array([0, 1])),
    ],
)
def test_input_validation(args):
    with pytest.raises(ValueError):
        train_decision_forest(*args)


def test_single_tree_agrees_with_sklearn(rng):
    tree_mod = pytest.importorskip("sklearn.tree")
    X = as_features(rng.normal(size=(300, 3)))
    y = rng.integers(0, 4, 300)
    for depth in (1, 2, 4, 8):
        ours = grow_tree(X, y, max_depth=depth)
        ref = tree_mod.DecisionTreeClassifier(max_depth=depth, random_state=0).fit(X, y)
        np.testing.assert_array_equal(np.argmax(leaf_distributions(ours, X, depth), axis=1), ref.predict(X))
