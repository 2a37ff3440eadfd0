"""Random forest of CART classification trees (Gini impurity, bootstrap samples).

Trees are grown greedily top-down, so a tree grown to depth D and read only down
to depth d < D predicts exactly like a tree grown with ``max_depth=d`` from the
same bootstrap sample. ``predict(..., max_depth=d)`` uses that to sweep depths
without regrowing.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (nodes, classes) bootstrap class counts at every node
    depth: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())


@dataclass(frozen=True)
class DecisionForest:
    trees: tuple
    max_depth: int
    n_classes: int
    seed: int


@numba.njit(cache=True, nogil=True)
def _gini_sum(counts, total):
    # total * gini impurity
    if total == 0:
        return 0.0
    s = 0.0
    for c in counts:
        s += c * c
    return total - s / total


@numba.njit(cache=True, nogil=True)
def _best_split(X, y, idx, start, end, n_classes, feature_order):
    n = end - start
    total = np.zeros(n_classes)
    for i in range(start, end):
        total[y[idx[i]]] += 1.0
    best_score = np.inf
    best_feature = -1
    best_threshold = 0.0
    left = np.zeros(n_classes)
    right = np.zeros(n_classes)
    vals = np.empty(n)
    labels = np.empty(n, dtype=np.int64)
    for f in feature_order:
        for i in range(n):
            vals[i] = X[idx[start + i], f]
        order = np.argsort(vals, kind="mergesort")
        for i in range(n):
            labels[i] = y[idx[start + order[i]]]
        left[:] = 0.0
        right[:] = total
        for i in range(n - 1):
            left[labels[i]] += 1.0
            right[labels[i]] -= 1.0
            lo = vals[order[i]]
            hi = vals[order[i + 1]]
            if lo == hi:
                continue
            nl = i + 1.0
            score = _gini_sum(left, nl) + _gini_sum(right, n - nl)
            if score < best_score:
                best_score = score
                best_feature = f
                best_threshold = 0.5 * (lo + hi)
                if best_threshold >= hi:  # midpoint rounded up onto hi
                    best_threshold = lo
    return best_feature, best_threshold


@numba.njit(cache=True, nogil=True)
def _grow(X, y, sample, max_depth, n_classes, order_keys):
    cap = 2 * len(sample) + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, n_classes))
    depth = np.zeros(cap, dtype=np.int64)
    idx = sample.copy()
    scratch = np.empty_like(idx)
    # breadth-first queue of (node, start, end): node ids at depth <= d do not
    # depend on max_depth, so neither do the per-node feature orders
    queue = np.empty((cap, 3), dtype=np.int64)
    queue[0, 0], queue[0, 1], queue[0, 2] = 0, 0, len(idx)
    head, tail = 0, 1
    nodes = 1
    while head < tail:
        node, start, end = queue[head, 0], queue[head, 1], queue[head, 2]
        head += 1
        pure = True
        first = y[idx[start]]
        for i in range(start, end):
            counts[node, y[idx[i]]] += 1.0
            if y[idx[i]] != first:
                pure = False
        if pure or depth[node] >= max_depth or end - start < 2:
            continue
        # features are visited in a per-node random order; exact Gini ties go to
        # the first visited, so equally good splits are spread across trees
        f, thr = _best_split(X, y, idx, start, end, n_classes, np.argsort(order_keys[node]))
        if f < 0:
            continue
        lo, hi = start, end
        for i in range(start, end):
            if X[idx[i], f] <= thr:
                scratch[lo] = idx[i]
                lo += 1
        for i in range(end - 1, start - 1, -1):
            if X[idx[i], f] > thr:
                hi -= 1
                scratch[hi] = idx[i]
        idx[start:end] = scratch[start:end]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = nodes, nodes + 1
        depth[nodes] = depth[node] + 1
        depth[nodes + 1] = depth[node] + 1
        queue[tail, 0], queue[tail, 1], queue[tail, 2] = nodes, start, lo
        queue[tail + 1, 0], queue[tail + 1, 1], queue[tail + 1, 2] = nodes + 1, lo, end
        tail += 2
        nodes += 2
    return feature[:nodes], threshold[:nodes], left[:nodes], right[:nodes], counts[:nodes], depth[:nodes]


@numba.njit(cache=True, nogil=True)
def _leaves(feature, threshold, left, right, depth, X, max_depth):
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0 and depth[node] < max_depth:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


def leaf_distributions(tree: Tree, features: np.ndarray, max_depth: int) -> np.ndarray:
    """Class frequencies of the node each row reaches, reading the tree down to ``max_depth``."""
    nodes = _leaves(tree.feature, tree.threshold, tree.left, tree.right, tree.depth, features, max_depth)
    counts = tree.counts[nodes]
    return counts / counts.sum(axis=1, keepdims=True)


def as_features(features) -> np.ndarray:
    """Features rounded to float32 precision, held as contiguous float64.

    Rounding merges values that differ only in the last float64 bits (cos and
    sin of different angles that agree mathematically), which would otherwise
    offer spurious split points.
    """
    return np.ascontiguousarray(np.asarray(features, dtype=np.float32), dtype=np.float64)


def tree_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def grow_tree(
    X: np.ndarray, y: np.ndarray, max_depth: int, n_classes: int = 4, sample=None, rng=None
) -> Tree:
    """One CART tree on ``sample`` (all rows by default).

    Without ``rng`` features are visited in index order, so ties go to the
    lowest feature index.
    """
    X = as_features(X)
    y = np.ascontiguousarray(y, dtype=np.int64)
    sample = np.arange(len(y)) if sample is None else np.asarray(sample, dtype=np.int64)
    cap = 2 * len(sample) + 1
    if rng is None:
        keys = np.broadcast_to(np.arange(X.shape[1], dtype=np.float64), (cap, X.shape[1]))
    else:
        keys = rng.random((cap, X.shape[1]))
    return Tree(*_grow(X, y, sample, int(max_depth), int(n_classes), np.ascontiguousarray(keys)))


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("SYMLAB_THREADS", os.cpu_count() or 1))
    return max(1, threads)


def train_decision_forest(
    features,
    labels,
    trees: int = 100,
    max_depth: int = 10,
    seed: int = 0,
    n_classes: int = 4,
    threads: int | None = None,
) -> DecisionForest:
    """Bootstrap forest; tree i draws its sample and its per-node feature orders
    from a generator seeded by (seed, i), so thread count never changes the result."""
    X = as_features(features)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise ValueError("need a non-empty 2-D feature matrix with one label per row")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    if max_depth < 0 or trees < 1:
        raise ValueError("need max_depth >= 0 and at least one tree")

    def build(i):
        rng = np.random.Generator(np.random.PCG64(tree_seed(seed, i)))
        sample = rng.integers(0, len(y), size=len(y))
        return grow_tree(X, y, max_depth, n_classes, sample, rng)

    workers = _threads(threads)
    if workers == 1:
        built = [build(i) for i in range(trees)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            built = list(pool.map(build, range(trees)))
    return DecisionForest(tuple(built), int(max_depth), int(n_classes), int(seed))


def tree_votes(forest: DecisionForest, features, max_depth: int | None = None) -> np.ndarray:
    """Per-row count of trees whose own prediction is each class."""
    X = as_features(features)
    depth = forest.max_depth if max_depth is None else min(int(max_depth), forest.max_depth)
    votes = np.zeros((len(X), forest.n_classes), dtype=np.int64)
    rows = np.arange(len(X))
    for t in forest.trees:
        votes[rows, np.argmax(leaf_distributions(t, X, depth), axis=1)] += 1
    return votes


def predict_proba(forest: DecisionForest, features, max_depth: int | None = None) -> np.ndarray:
    """Mean over trees of the leaf class frequencies."""
    X = as_features(features)
    depth = forest.max_depth if max_depth is None else min(int(max_depth), forest.max_depth)
    proba = np.zeros((len(X), forest.n_classes))
    for t in forest.trees:
        proba += leaf_distributions(t, X, depth)
    return proba / len(forest.trees)


def predict(forest: DecisionForest, features, max_depth: int | None = None, vote: str = "soft") -> np.ndarray:
    """Forest prediction; ties go to the lowest class index.

    ``vote="soft"`` takes the class with the highest mean leaf frequency,
    ``vote="hard"`` the class most trees predict.
    """
    if vote == "soft":
        scores = predict_proba(forest, features, max_depth)
    elif vote == "hard":
        scores = tree_votes(forest, features, max_depth)
    else:
        raise ValueError(f"vote is 'soft' or 'hard', got {vote!r}")
    return np.argmax(scores, axis=1)
