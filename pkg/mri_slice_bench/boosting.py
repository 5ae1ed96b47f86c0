"""
Second-order gradient-boosted regression trees for the logistic loss.

Each round fits one tree to the gradient/hessian pair of the current
margin (g = p - y, h = p(1 - p)) with exact greedy split search; leaves
get weight -G / (H + lambda) and are added with shrinkage eta.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .config import GbtParams, TrainConfig
from .dataset import Dataset
from .exceptions import DimensionMismatchError, ValidationError
from .trees import Tree, TreeBuffer, midpoint, sorted_columns

logger = logging.getLogger(__name__)

_P_CLIP = 1e-6


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def log_loss(y: np.ndarray, margin: np.ndarray) -> float:
    """Mean logistic loss of margins (logits) against 0/1 labels."""
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def gbt_split_gain(GL, HL, GR, HR, reg_lambda: float, gamma: float):
    """1/2 [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)] - gamma."""
    return 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda)
                  - (GL + GR) ** 2 / (HL + HR + reg_lambda)) - gamma


@dataclass(eq=False)
class GbtModel:
    trees: List[Tree]
    base_score: float
    eta: float
    n_features: int
    train_loss: List[float] = field(default_factory=list)
    single_class: bool = False
    params: GbtParams = field(default_factory=GbtParams)


def _best_split(X_node: np.ndarray, g: np.ndarray, h: np.ndarray, params: GbtParams):
    n, d = X_node.shape
    order, vals = sorted_columns(X_node, np.arange(d))
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G, H = g.sum(), h.sum()
    gain = gbt_split_gain(GL, HL, G - GL, H - HL, params.reg_lambda, params.gamma)
    gain = np.where(vals[1:] > vals[:-1], gain, -np.inf).T.ravel()
    best = int(np.argmax(gain))
    if not gain[best] > 0.0:
        return None
    fi, pos = divmod(best, n - 1)
    return fi, midpoint(vals[pos, fi], vals[pos + 1, fi])


def grow_regression_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, params: GbtParams) -> Tree:
    buf = TreeBuffer(value_width=1)
    stack = [(buf.new_node(), np.arange(g.size), 0)]
    while stack:
        node, idx, depth = stack.pop()
        weight = -g[idx].sum() / (h[idx].sum() + params.reg_lambda)
        split = None
        if depth < params.max_depth and idx.size >= 2:
            split = _best_split(X[idx], g[idx], h[idx], params)
        if split is None:
            buf.make_leaf(node, weight)
            continue
        feature, threshold = split
        left, right = buf.make_split(node, feature, threshold, weight)
        goes_left = X[idx, feature] <= threshold
        stack.append((right, idx[~goes_left], depth + 1))
        stack.append((left, idx[goes_left], depth + 1))
    return buf.to_tree()


def gbt_fit(X: np.ndarray, y: np.ndarray, params: GbtParams) -> GbtModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        raise ValidationError(f"boosting needs >= 2 training items, got {y.size}")
    p0 = float(np.clip(y.mean(), _P_CLIP, 1.0 - _P_CLIP))
    base = float(np.log(p0 / (1.0 - p0)))
    if np.unique(y).size == 1:
        logger.warning("SingleClass: all %d training labels are %d; returning a constant predictor", y.size, int(y[0]))
        return GbtModel(trees=[], base_score=base, eta=params.eta, n_features=X.shape[1],
                        single_class=True, params=params)
    margin = np.full(y.size, base)
    losses = [log_loss(y, margin)]
    trees = []
    for r in range(params.n_rounds):
        p = sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        tree = grow_regression_tree(X, g, h, params)
        margin = margin + params.eta * tree.predict_value(X)[:, 0]
        trees.append(tree)
        losses.append(log_loss(y, margin))
    logger.debug("Boosted %d rounds, train log-loss %.4f -> %.4f", params.n_rounds, losses[0], losses[-1])
    return GbtModel(trees=trees, base_score=base, eta=params.eta, n_features=X.shape[1],
                    train_loss=losses, params=params)


def gbt_train(data: Dataset, cfg: TrainConfig) -> GbtModel:
    """No sampling is involved, so the result depends only on data and config."""
    X = data.matrix(data.train, cfg.feature_target)
    return gbt_fit(X, data.labels[data.train], cfg.gbt)


def gbt_margin(model: GbtModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise DimensionMismatchError(f"expected {model.n_features} features, got {X.shape[1]}")
    margin = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        margin += model.eta * tree.predict_value(X)[:, 0]
    return margin


def gbt_predict_batch(model: GbtModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    probs = sigmoid(gbt_margin(model, X))
    return (probs >= 0.5).astype(np.int64), probs


def gbt_predict(model: GbtModel, x: np.ndarray) -> Tuple[int, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError(f"expected a single feature vector, got shape {x.shape}")
    labels, probs = gbt_predict_batch(model, x[None, :])
    return int(labels[0]), float(probs[0])
