"""Second-order gradient-boosted regression trees for squared error.

Leaves are regularised with an L1 soft threshold (``alpha``) on the summed
gradient and an L2 term (``reg_lambda``) on the summed hessian.  Splits are
found by exact greedy search over the sorted values of a per-tree random
subset of columns.
"""
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._io import read_json, write_json
from .exceptions import ValidationError


@dataclass
class BoostParams:
    n_trees: int = 128
    max_depth: int = 7
    learning_rate: float = 0.1
    colsample_by_tree: float = 0.3
    alpha: float = 40.0
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    base_score: float = 0.5

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 0:
            raise ValidationError("n_trees and max_depth must be nonnegative")
        if not 0.0 < self.colsample_by_tree <= 1.0:
            raise ValidationError("colsample_by_tree must lie in (0, 1]")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.alpha < 0 or self.reg_lambda < 0:
            raise ValidationError("alpha and lambda must be nonnegative")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["reg_lambda"] = d.pop("lambda")
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown boosting parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class Tree:
    """Flat preorder tree.  ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return node
            rows = np.flatnonzero(inner)
            go_left = X[rows, feat[rows]] < self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict(self, X):
        return self.value[self.apply(X)]

    def depth(self):
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
        )


def soft_threshold(G, alpha):
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def leaf_weight(G, H, alpha, reg_lambda):
    return float(-soft_threshold(G, alpha) / (H + reg_lambda))


def _score(G, H, alpha, reg_lambda):
    t = soft_threshold(G, alpha)
    return t * t / (H + reg_lambda)


class _TreeBuilder:
    def __init__(self, X, g, h, columns, max_depth, alpha, reg_lambda, min_child_weight):
        self.X, self.g, self.h = X, g, h
        self.columns = columns
        self.max_depth = max_depth
        self.alpha, self.reg_lambda = alpha, reg_lambda
        self.min_child_weight = min_child_weight
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def _new_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def _best_split(self, idx, G, H):
        parent = _score(G, H, self.alpha, self.reg_lambda)
        best_gain, best = 0.0, None
        g, h = self.g[idx], self.h[idx]
        for col in self.columns:
            vals = self.X[idx, col]
            order = np.argsort(vals, kind="stable")
            sv = vals[order]
            distinct = sv[:-1] < sv[1:]
            if not distinct.any():
                continue
            GL = np.cumsum(g[order])[:-1]
            HL = np.cumsum(h[order])[:-1]
            GR, HR = G - GL, H - HL
            ok = distinct & (HL >= self.min_child_weight) & (HR >= self.min_child_weight)
            if not ok.any():
                continue
            gain = _score(GL, HL, self.alpha, self.reg_lambda) + _score(GR, HR, self.alpha, self.reg_lambda) - parent
            gain = np.where(ok, gain, -np.inf)
            k = int(np.argmax(gain))
            # strict comparison keeps the lowest column on ties
            if gain[k] > best_gain:
                lo, hi = sv[k], sv[k + 1]
                thr = 0.5 * (lo + hi)
                if not lo < thr <= hi:
                    thr = hi
                best_gain, best = float(gain[k]), (int(col), float(thr))
        return best

    def build(self, idx, depth, out):
        node = self._new_node()
        G = float(self.g[idx].sum())
        H = float(self.h[idx].sum())
        split = self._best_split(idx, G, H) if depth < self.max_depth and len(idx) > 1 else None
        if split is None:
            w = leaf_weight(G, H, self.alpha, self.reg_lambda)
            self.value[node] = w
            out[idx] = w
            return node
        col, thr = split
        mask = self.X[idx, col] < thr
        self.feature[node] = col
        self.threshold[node] = thr
        self.left[node] = self.build(idx[mask], depth + 1, out)
        self.right[node] = self.build(idx[~mask], depth + 1, out)
        return node

    def tree(self):
        return Tree(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=float),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.value, dtype=float),
        )


class GBMRegressor(RegressorMixin, BaseEstimator):
    """Boosted regression trees with column subsampling and L1/L2 leaf penalties.

    Parameters mirror :class:`BoostParams`; ``random_state`` seeds the column
    sampling, which is the only source of randomness.
    """

    def __init__(
        self,
        n_trees=128,
        max_depth=7,
        learning_rate=0.1,
        colsample_by_tree=0.3,
        alpha=40.0,
        reg_lambda=1.0,
        min_child_weight=1.0,
        base_score=0.5,
        random_state=0,
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.colsample_by_tree = colsample_by_tree
        self.alpha = alpha
        self.reg_lambda = reg_lambda
        self.min_child_weight = min_child_weight
        self.base_score = base_score
        self.random_state = random_state

    @classmethod
    def from_params(cls, params: BoostParams, seed=0):
        return cls(**params.to_dict(), random_state=seed)

    @property
    def params(self):
        return BoostParams(
            self.n_trees,
            self.max_depth,
            self.learning_rate,
            self.colsample_by_tree,
            self.alpha,
            self.reg_lambda,
            self.min_child_weight,
            self.base_score,
        )

    def fit(self, X, y, callback=None):
        """Fit ``n_trees`` rounds.  ``callback(round, train_predictions)`` runs after each tree."""
        params = self.params  # validates
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n, n_feat = X.shape
        rng = np.random.default_rng(self.random_state)
        k = max(1, math.ceil(params.colsample_by_tree * n_feat - 1e-9))
        pred = np.full(n, float(params.base_score))
        h = np.ones(n)
        all_rows = np.arange(n)
        trees = []
        for r in range(params.n_trees):
            g = pred - y
            cols = np.sort(rng.choice(n_feat, size=k, replace=False))
            builder = _TreeBuilder(
                X, g, h, cols, params.max_depth, params.alpha, params.reg_lambda, params.min_child_weight
            )
            leaf_out = np.empty(n)
            builder.build(all_rows, 0, leaf_out)
            trees.append(builder.tree())
            pred = pred + params.learning_rate * leaf_out
            if callback is not None:
                callback(r, pred.copy())
        self.trees_ = trees
        self.n_features_in_ = n_feat
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = np.full(X.shape[0], float(self.base_score))
        for tree in self.trees_:
            out += self.learning_rate * tree.predict(X)
        return out

    def to_dict(self):
        check_is_fitted(self, "trees_")
        return {
            "params": self.params.to_dict(),
            "random_state": self.random_state,
            "feature_count": self.n_features_in_,
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d):
        model = cls.from_params(BoostParams.from_dict(d["params"]), d.get("random_state", 0))
        model.trees_ = [Tree.from_dict(t) for t in d["trees"]]
        model.n_features_in_ = int(d["feature_count"])
        for t in model.trees_:
            if np.any(t.feature >= model.n_features_in_):
                raise ValidationError("tree splits on a feature index beyond feature_count")
        return model

    def save(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))


def fit(rows, params: Optional[BoostParams] = None, seed=0):
    """Fit on FeatureRows (anything with ``features`` and ``target``)."""
    from .weightstats import rows_to_arrays

    X, y = rows_to_arrays(rows)
    return GBMRegressor.from_params(params or BoostParams(), seed).fit(X, y)


def predict(model, features):
    """Prediction for a single feature vector."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise ValidationError("predict expects one feature vector")
    return float(model.predict(features[None, :])[0])


@dataclass
class EvalReport:
    accuracy_percent: float
    rrmse: float
    n_rows: int
    epoch_cap_fraction: Optional[float] = None


def evaluate(predictions, targets, epoch_cap_fraction=None):
    """Accuracy = 100 * (1 - mean relative absolute error), floored at 0; RRMSE = RMSE / mean |target|."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.size == 0 or p.shape != t.shape:
        raise ValidationError("predictions and targets must be non-empty and equally long")
    if np.any(t == 0):
        raise ValidationError("relative metrics are undefined for zero targets")
    rel = np.abs(p - t) / np.abs(t)
    accuracy = max(0.0, 100.0 * (1.0 - float(rel.mean())))
    rrmse = float(np.sqrt(np.mean((p - t) ** 2)) / np.mean(np.abs(t)))
    return EvalReport(accuracy, rrmse, int(p.size), epoch_cap_fraction)
