"""Array-backed binary decision tree shared by the forest and the boosting learner."""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import List

import numpy as np

LEAF = -1


@dataclass(eq=False)
class Tree:
    """
    Node i splits on ``feature[i]`` at ``threshold[i]`` (x <= threshold goes
    left); leaves have feature == -1 and carry ``value[i]`` (class counts for
    classification trees, one leaf weight for regression trees).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature == LEAF))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of X."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] != LEAF
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max()) if self.n_nodes else 0


@dataclass
class TreeBuffer:
    """Growable node storage; node ids are assigned in creation order."""

    value_width: int
    feature: List[int] = field(default_factory=list)
    threshold: List[float] = field(default_factory=list)
    left: List[int] = field(default_factory=list)
    right: List[int] = field(default_factory=list)
    value: List[np.ndarray] = field(default_factory=list)

    def new_node(self) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(np.zeros(self.value_width))
        return len(self.feature) - 1

    def make_leaf(self, node: int, value) -> None:
        self.value[node] = np.asarray(value, dtype=np.float64).reshape(self.value_width)

    def make_split(self, node: int, feature: int, threshold: float, value) -> tuple[int, int]:
        self.make_leaf(node, value)
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)
        left, right = self.new_node(), self.new_node()
        self.left[node], self.right[node] = left, right
        return left, right

    def to_tree(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.vstack(self.value) if self.value else np.zeros((0, self.value_width)),
        )


def sorted_columns(X_node: np.ndarray, features: np.ndarray):
    """Per-feature ascending order of the node's rows, and the sorted values."""
    sub = X_node[:, features]
    order = np.argsort(sub, axis=0, kind="stable")
    return order, np.take_along_axis(sub, order, axis=0)


def midpoint(lo: float, hi: float) -> float:
    """Threshold between two distinct sorted values that sends ``lo`` left and ``hi`` right."""
    thr = lo + (hi - lo) / 2.0
    return lo if thr >= hi else thr
