"""Weighted random-forest regressor over soft labels.

Built from scratch so the split semantics are fully pinned down: splits
maximize weighted variance reduction over a per-node random feature subset,
score ties (up to a small relative tolerance absorbing float accumulation
noise) are broken by lower feature index then lower threshold, and the
bootstrap resamples examples proportionally to their weights. Per-tree seeds
are derived from the master seed by a fixed counter scheme, so a forest is
byte-identical regardless of how tree construction is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "ForestError",
    "ForestConfig",
    "WeightedRandomForestRegressor",
    "fit_forest",
]

_UNLIMITED_DEPTH = 2**31


class ForestError(ValueError):
    """Raised for invalid forest configuration or training input."""


@njit(cache=True)
def _grow_tree(X, y, w, max_depth, min_leaf_weight, max_features, seed):
    n, d = X.shape
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes, np.float64)
    node_weight = np.zeros(max_nodes, np.float64)

    idx = np.arange(n)
    buf = np.empty(n, np.int64)
    feat_pool = np.empty(d, np.int64)
    np.random.seed(seed)

    stack_node = np.empty(max_nodes, np.int64)
    stack_start = np.empty(max_nodes, np.int64)
    stack_end = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)
    top = 0
    stack_node[top] = 0
    stack_start[top] = 0
    stack_end[top] = n
    stack_depth[top] = 0
    top += 1
    node_count = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        s = stack_start[top]
        e = stack_end[top]
        depth = stack_depth[top]
        m = e - s

        sw = 0.0
        swy = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(s, e):
            j = idx[i]
            sw += w[j]
            swy += w[j] * y[j]
            if y[j] < ymin:
                ymin = y[j]
            if y[j] > ymax:
                ymax = y[j]
        val = swy / sw
        if val < 0.0:
            val = 0.0
        elif val > 1.0:
            val = 1.0
        value[node] = val
        node_weight[node] = sw

        if depth >= max_depth or ymin == ymax or sw < 2.0 * min_leaf_weight:
            continue

        if max_features >= d:
            n_feats = d
            for i in range(d):
                feat_pool[i] = i
        else:
            n_feats = max_features
            for i in range(d):
                feat_pool[i] = i
            for i in range(max_features):
                jj = i + np.random.randint(0, d - i)
                tmp = feat_pool[i]
                feat_pool[i] = feat_pool[jj]
                feat_pool[jj] = tmp
            # ascending order keeps the tie-break rule independent of draw order
            feat_pool[:n_feats] = np.sort(feat_pool[:n_feats])

        # Scores equal up to accumulation-order noise are ties; the first
        # candidate in (feature, threshold) scan order wins a tie, so the
        # tie-break is lower feature index, then lower threshold.
        tol = 1e-9 * sw
        best_score = 0.0
        best_f = -1
        best_thr = 0.0
        vals = np.empty(m, np.float64)
        for fi in range(n_feats):
            f = feat_pool[fi]
            for i in range(m):
                vals[i] = X[idx[s + i], f]
            order = np.argsort(vals)
            cw = 0.0
            cwy = 0.0
            for i in range(m - 1):
                j = idx[s + order[i]]
                cw += w[j]
                cwy += w[j] * y[j]
                v1 = vals[order[i]]
                v2 = vals[order[i + 1]]
                if v1 == v2:
                    continue
                wl = cw
                wr = sw - cw
                if wl < min_leaf_weight or wr < min_leaf_weight:
                    continue
                sl = cwy
                sr = swy - cwy
                score = sl * sl / wl + sr * sr / wr - swy * swy / sw
                if score > best_score + tol:
                    best_score = score
                    best_f = f
                    best_thr = 0.5 * (v1 + v2)

        if best_f < 0:
            continue

        # stable partition of idx[s:e] around the split
        nl = 0
        for i in range(s, e):
            if X[idx[i], best_f] <= best_thr:
                buf[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(s, e):
            if X[idx[i], best_f] > best_thr:
                buf[nr] = idx[i]
                nr += 1
        for i in range(m):
            idx[s + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        lchild = node_count
        rchild = node_count + 1
        node_count += 2
        left[node] = lchild
        right[node] = rchild

        stack_node[top] = rchild
        stack_start[top] = s + nl
        stack_end[top] = e
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lchild
        stack_start[top] = s
        stack_end[top] = s + nl
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:node_count].copy(),
        threshold[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        value[:node_count].copy(),
        node_weight[:node_count].copy(),
    )


@njit(cache=True)
def _predict_tree(feature, threshold, left, right, value, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters of the weighted forest; all values are reported."""

    n_trees: int = 500
    max_depth: int | None = None
    min_weight_fraction_leaf: float = 1e-3
    features_per_split: int | None = None  # None resolves to ceil(d / 3)
    bootstrap: bool = True
    uniform_bootstrap: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ForestError("n_trees must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ForestError("max_depth must be positive or None")
        if self.min_weight_fraction_leaf <= 0:
            raise ForestError("min_weight_fraction_leaf must be positive")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ForestError("features_per_split must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_weight_fraction_leaf": self.min_weight_fraction_leaf,
            "features_per_split": self.features_per_split,
            "bootstrap": self.bootstrap,
            "uniform_bootstrap": self.uniform_bootstrap,
            "seed": self.seed,
        }


class WeightedRandomForestRegressor(BaseEstimator, RegressorMixin):
    """Random-forest regressor for soft labels with per-example weights.

    Parameters mirror :class:`ForestConfig`. The default bootstrap draws a
    weight-proportional resample of the training set (with replacement, same
    size) and grows each tree on unit weights; set ``uniform_bootstrap=True``
    to draw uniformly and carry the weights into the split criterion instead.
    """

    def __init__(
        self,
        n_trees: int = 500,
        max_depth: int | None = None,
        min_weight_fraction_leaf: float = 1e-3,
        features_per_split: int | None = None,
        bootstrap: bool = True,
        uniform_bootstrap: bool = False,
        seed: int = 0,
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_weight_fraction_leaf = min_weight_fraction_leaf
        self.features_per_split = features_per_split
        self.bootstrap = bootstrap
        self.uniform_bootstrap = uniform_bootstrap
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        ForestConfig(
            self.n_trees,
            self.max_depth,
            self.min_weight_fraction_leaf,
            self.features_per_split,
            self.bootstrap,
            self.uniform_bootstrap,
            self.seed,
        )
        X = check_array(X, dtype=np.float64, order="C")
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ForestError("y must be one label per training example")
        n, d = X.shape
        if sample_weight is None:
            w = np.ones(n, dtype=np.float64)
        else:
            w = np.asarray(sample_weight, dtype=np.float64)
            if w.shape != (n,):
                raise ForestError("sample_weight length mismatch")
            if np.any(w < 0):
                raise ForestError("sample weights must be nonnegative")
        total_weight = float(w.sum())
        if total_weight <= 0:
            raise ForestError("total training weight must be positive")

        max_features = self.features_per_split
        if max_features is None:
            max_features = math.ceil(d / 3)
        if not (1 <= max_features <= d):
            raise ForestError(f"features_per_split must be in 1..{d}")
        depth = self.max_depth if self.max_depth is not None else _UNLIMITED_DEPTH
        frac = self.min_weight_fraction_leaf

        trees = []
        p = w / total_weight
        for t in range(self.n_trees):
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(t,))
            state = ss.generate_state(2)
            rng = np.random.default_rng(int(state[0]))
            if self.bootstrap:
                if self.uniform_bootstrap:
                    ind = rng.integers(0, n, size=n)
                    Xt, yt, wt = X[ind], y[ind], w[ind]
                else:
                    ind = rng.choice(n, size=n, replace=True, p=p)
                    Xt, yt = X[ind], y[ind]
                    wt = np.ones(n, dtype=np.float64)
            else:
                Xt, yt, wt = X, y, w
            trees.append(
                _grow_tree(
                    np.ascontiguousarray(Xt),
                    yt,
                    wt,
                    depth,
                    frac * float(wt.sum()),
                    max_features,
                    int(state[1]),
                )
            )

        self.trees_ = trees
        self.n_features_in_ = d
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64, order="C")
        if X.shape[1] != self.n_features_in_:
            raise ForestError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        out = np.zeros(X.shape[0], dtype=np.float64)
        for feature, threshold, left, right, value, _ in self.trees_:
            _predict_tree(feature, threshold, left, right, value, X, out)
        out /= len(self.trees_)
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        """Self-describing JSON-serializable dump of the fitted forest."""
        check_is_fitted(self, "trees_")
        return {
            "config": ForestConfig(**self.get_params()).to_dict(),
            "n_features": self.n_features_in_,
            "trees": [
                {
                    "feature": t[0].tolist(),
                    "threshold": t[1].tolist(),
                    "left": t[2].tolist(),
                    "right": t[3].tolist(),
                    "value": t[4].tolist(),
                    "weight": t[5].tolist(),
                }
                for t in self.trees_
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "WeightedRandomForestRegressor":
        model = cls(**payload["config"])
        model.n_features_in_ = payload["n_features"]
        model.trees_ = [
            (
                np.asarray(t["feature"], np.int64),
                np.asarray(t["threshold"], np.float64),
                np.asarray(t["left"], np.int64),
                np.asarray(t["right"], np.int64),
                np.asarray(t["value"], np.float64),
                np.asarray(t["weight"], np.float64),
            )
            for t in payload["trees"]
        ]
        return model


def fit_forest(examples, config: ForestConfig) -> WeightedRandomForestRegressor:
    """Fit a forest on a list of TrainingExample rows."""
    from .labeling import examples_to_arrays

    if not examples:
        raise ForestError("cannot fit a forest on an empty training set")
    X, y, w = examples_to_arrays(examples)
    model = WeightedRandomForestRegressor(
        n_trees=config.n_trees,
        max_depth=config.max_depth,
        min_weight_fraction_leaf=config.min_weight_fraction_leaf,
        features_per_split=config.features_per_split,
        bootstrap=config.bootstrap,
        uniform_bootstrap=config.uniform_bootstrap,
        seed=config.seed,
    )
    return model.fit(X, y, sample_weight=w)
