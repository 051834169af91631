"""CART regression trees and a bagged random forest.

Splits minimise the summed within-child squared error (equivalently,
maximise variance reduction) over a random subset of features. Ties go
to the lowest feature index, then the lowest threshold.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ..errors import InsufficientData
from ._base import validate_fit_data, validate_predict_data

LEAF = -1


def n_split_features(features_per_split, n_features):
    if features_per_split is None:
        return n_features
    if isinstance(features_per_split, float):
        if not 0.0 < features_per_split <= 1.0:
            raise ValueError("fractional features_per_split must be in (0, 1]")
        return max(1, int(math.ceil(features_per_split * n_features)))
    k = int(features_per_split)
    if k < 1:
        raise ValueError("features_per_split must be >= 1")
    return min(k, n_features)


def best_split(X, y, features, min_leaf):
    """Best (feature, threshold, child_sse) over ``features`` or None.

    ``features`` must be sorted ascending for the tie-break order to hold.
    """
    m = len(y)
    if m < 2 * min_leaf:
        return None
    Xs = X[:, features]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    tot, tot_sq = csum[-1], csq[-1]

    # split after position p: left holds rows 0..p
    p = np.arange(min_leaf - 1, m - min_leaf)
    n_left = (p + 1)[:, None].astype(np.float64)
    n_right = m - n_left
    s_left = csum[p]
    s_right = tot - s_left
    sse = (csq[p] - s_left**2 / n_left) + ((tot_sq - csq[p]) - s_right**2 / n_right)
    valid = xs[p] < xs[p + 1]
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf)
    # feature-major flattening: first minimum = lowest feature, then lowest threshold
    flat = np.argmin(sse.T)
    fj, pi = divmod(int(flat), len(p))
    lo, hi = xs[p[pi], fj], xs[p[pi] + 1, fj]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(features[fj]), float(thr), float(sse[pi, fj])


def grow_tree(X, y, rng, max_depth=None, min_leaf=1, features_per_split=None):
    """Grow one tree; returns flat node arrays (feature, threshold, left, right, value)."""
    n_features = X.shape[1]
    k = n_split_features(features_per_split, n_features)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        yr = y[rows]
        # a pure node stores its value verbatim rather than a rounded mean
        value.append(float(yr[0] if np.all(yr == yr[0]) else yr.mean()))
        return len(value) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        yr = y[rows]
        if len(rows) < 2 * min_leaf or np.all(yr == yr[0]):
            continue
        feats = np.sort(rng.choice(n_features, size=k, replace=False)) if k < n_features else np.arange(n_features)
        found = best_split(X[rows], yr, feats, min_leaf)
        if found is None:
            continue
        j, thr, child_sse = found
        parent_sse = float(((yr - yr.mean()) ** 2).sum())
        if child_sse >= parent_sse - 1e-12 * max(parent_sse, 1.0):
            continue
        go_left = X[rows, j] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node], threshold[node] = j, thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))

    return {
        "feature": np.array(feature, dtype=np.int64),
        "threshold": np.array(threshold, dtype=np.float64),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "value": np.array(value, dtype=np.float64),
    }


def predict_tree(tree, X):
    node = np.zeros(X.shape[0], dtype=np.int64)
    feature, threshold = tree["feature"], tree["threshold"]
    active = feature[node] != LEAF
    while active.any():
        idx = np.flatnonzero(active)
        nd = node[idx]
        go_left = X[idx, feature[nd]] <= threshold[nd]
        node[idx] = np.where(go_left, tree["left"][nd], tree["right"][nd])
        active = feature[node] != LEAF
    return tree["value"][node]


class ForestRegressor(RegressorMixin, BaseEstimator):
    """Bagged CART forest; prediction is the mean over trees.

    Each tree draws from its own generator spawned from ``random_state``,
    so tree ``k`` is the same no matter how the trees are scheduled.
    """

    _kind = "rf"

    def __init__(
        self,
        n_trees=100,
        max_depth=None,
        min_leaf=1,
        features_per_split=1.0 / 3.0,
        bootstrap=True,
        random_state=0,
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.features_per_split = features_per_split
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y, feature_names=None):
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be >= 1")
        X, y = validate_fit_data(self, X, y, feature_names)
        n = X.shape[0]
        if n < 2 * self.min_leaf:
            raise InsufficientData(f"{n} rows, need at least {2 * self.min_leaf}")
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_trees)
        self.trees_ = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            self.trees_.append(
                grow_tree(X[rows], y[rows], rng, self.max_depth, self.min_leaf, self.features_per_split)
            )
        return self

    def predict(self, X):
        X = validate_predict_data(self, X)
        preds = np.array([predict_tree(t, X) for t in self.trees_])
        # averaging offsets from the first tree keeps unanimous forests exact
        return preds[0] + (preds - preds[0]).mean(axis=0)

    def _get_state(self):
        return {
            "n_features_in_": self.n_features_in_,
            "feature_names_in_": list(self.feature_names_in_),
            "trees_": self.trees_,
        }

    def _set_state(self, s):
        self.n_features_in_ = s["n_features_in_"]
        self.feature_names_in_ = np.array(s["feature_names_in_"], dtype=object)
        self.trees_ = s["trees_"]
