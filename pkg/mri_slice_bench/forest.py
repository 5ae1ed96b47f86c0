"""
Random forest of CART classification trees (Gini impurity, exact
midpoint split search, bootstrap rows, per-node random feature subsets).
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .config import RfParams, TrainConfig
from .dataset import Dataset
from .exceptions import DimensionMismatchError, ValidationError
from .trees import Tree, TreeBuffer, midpoint, sorted_columns
from .utils import derive_seed

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class RandomForestModel:
    trees: List[Tree]
    n_features: int
    single_class: bool = False
    constant_label: Optional[int] = None
    params: RfParams = field(default_factory=RfParams)


def n_subfeatures(d: int, mode: str) -> int:
    return d if mode == "all" else max(1, math.ceil(math.sqrt(d)))


def _gini_weighted(ones_left: np.ndarray, n_left: np.ndarray, n: int, total_ones: int) -> np.ndarray:
    """Size-weighted Gini impurity of the two children, for every candidate split."""
    n_right = n - n_left
    ones_right = total_ones - ones_left
    left_sq = (ones_left ** 2 + (n_left - ones_left) ** 2) / n_left
    right_sq = (ones_right ** 2 + (n_right - ones_right) ** 2) / n_right
    return (n - left_sq - right_sq) / n


def _best_split(X_node: np.ndarray, y_node: np.ndarray, features: np.ndarray,
                min_leaf: int) -> Optional[Tuple[int, float, float]]:
    n = y_node.size
    order, vals = sorted_columns(X_node, features)
    ones_left = np.cumsum(y_node[order], axis=0)[:-1].astype(np.float64)
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    weighted = _gini_weighted(ones_left, n_left, n, int(y_node.sum()))
    valid = (vals[1:] > vals[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not valid.any():
        return None
    # feature-major flattening: ties go to the earlier feature, then the earlier position
    scores = np.where(valid, weighted, np.inf).T.ravel()
    best = int(np.argmin(scores))
    fi, pos = divmod(best, n - 1)
    return int(features[fi]), midpoint(vals[pos, fi], vals[pos + 1, fi]), float(scores[best])


def grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
              max_depth: Optional[int] = None, min_leaf: int = 1,
              max_features: Optional[int] = None) -> Tree:
    """Grow one CART tree; leaves store (count of class 0, count of class 1)."""
    d = X.shape[1]
    k = d if max_features is None else min(max_features, d)
    buf = TreeBuffer(value_width=2)
    stack = [(buf.new_node(), np.arange(y.size), 0)]
    while stack:
        node, idx, depth = stack.pop()
        y_node = y[idx]
        ones = int(y_node.sum())
        counts = (idx.size - ones, ones)
        if (ones in (0, idx.size) or idx.size < 2 * min_leaf
                or (max_depth is not None and depth >= max_depth)):
            buf.make_leaf(node, counts)
            continue
        feats = rng.choice(d, size=k, replace=False) if k < d else np.arange(d)
        split = _best_split(X[idx], y_node, feats, min_leaf)
        if split is None and k < d:
            rest = np.setdiff1d(np.arange(d), feats)
            split = _best_split(X[idx], y_node, rest, min_leaf)
        if split is None:
            buf.make_leaf(node, counts)
            continue
        feature, threshold, _ = split
        left, right = buf.make_split(node, feature, threshold, counts)
        goes_left = X[idx, feature] <= threshold
        stack.append((right, idx[~goes_left], depth + 1))
        stack.append((left, idx[goes_left], depth + 1))
    return buf.to_tree()


def rf_fit(X: np.ndarray, y: np.ndarray, params: RfParams, seed: int) -> RandomForestModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if y.size < 2:
        raise ValidationError(f"random forest needs >= 2 training items, got {y.size}")
    d = X.shape[1]
    if np.unique(y).size == 1:
        logger.warning("SingleClass: all %d training labels are %d; returning a constant predictor", y.size, y[0])
        return RandomForestModel(trees=[], n_features=d, single_class=True, constant_label=int(y[0]), params=params)
    k = n_subfeatures(d, params.feature_subsample)
    trees = []
    for t in range(params.n_trees):
        # per-tree stream so results do not depend on build order
        rng = np.random.default_rng(derive_seed(seed, f"rf-tree-{t}"))
        sample = rng.integers(0, y.size, size=y.size)
        trees.append(grow_tree(X[sample], y[sample], rng, max_depth=params.max_depth,
                               min_leaf=params.min_leaf, max_features=k))
    logger.debug("Grew %d trees (%d features, %d per node)", len(trees), d, k)
    return RandomForestModel(trees=trees, n_features=d, params=params)


def rf_train(data: Dataset, cfg: TrainConfig) -> RandomForestModel:
    X = data.matrix(data.train, cfg.feature_target)
    return rf_fit(X, data.labels[data.train], cfg.rf, derive_seed(cfg.seed, "rf"))


def rf_predict_proba(model: RandomForestModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise DimensionMismatchError(f"expected {model.n_features} features, got {X.shape[1]}")
    if model.single_class:
        return np.full(X.shape[0], float(model.constant_label))
    total = np.zeros(X.shape[0])
    for tree in model.trees:
        counts = tree.predict_value(X)
        total += counts[:, 1] / counts.sum(axis=1)
    return total / len(model.trees)


def rf_predict_batch(model: RandomForestModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    probs = rf_predict_proba(model, X)
    return (probs >= 0.5).astype(np.int64), probs


def rf_predict(model: RandomForestModel, x: np.ndarray) -> Tuple[int, float]:
    """(label, P(AD)); the label is 1 when the mean leaf frequency is >= 0.5."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError(f"expected a single feature vector, got shape {x.shape}")
    labels, probs = rf_predict_batch(model, x[None, :])
    return int(labels[0]), float(probs[0])
