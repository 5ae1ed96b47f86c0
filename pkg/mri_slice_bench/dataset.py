from __future__ import annotations
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ValidationError
from .features import DEFAULT_TARGET, feature_matrix, image_tensor
from .preprocess import GrayImage

CLASS_NAMES = {0: "NL", 1: "AD"}
LABELS_BY_NAME = {name: label for label, name in CLASS_NAMES.items()}
TRAIN_FRACTION = 0.8

Item = Union[np.ndarray, GrayImage]


def stratified_split(labels: Sequence[int], seed: int,
                     train_fraction: float = TRAIN_FRACTION) -> Tuple[np.ndarray, np.ndarray]:
    """Per class, permute with ``seed`` and send floor(f*n + 0.5) items to train."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == c))
        k = int(math.floor(train_fraction * idx.size + 0.5))
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


@dataclass(eq=False)
class Dataset:
    """
    Labeled items (feature vectors or GrayImages) with disjoint train/test
    index sets. ``sources`` optionally records (volume, slice index) per item.
    """

    items: List[Item]
    labels: np.ndarray
    train: np.ndarray
    test: np.ndarray
    sources: Optional[List[Tuple[str, int]]] = None
    _features: dict = field(default_factory=dict, repr=False)
    _tensor: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train = np.asarray(self.train, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        n = len(self.items)
        if self.labels.shape != (n,):
            raise ValidationError(f"{n} items but {self.labels.size} labels")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise ValidationError("labels must be 0 (NL) or 1 (AD)")
        for name, idx in (("train", self.train), ("test", self.test)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValidationError(f"{name} indices out of range")
        if np.intersect1d(self.train, self.test).size:
            raise ValidationError("train and test splits overlap")
        if self.sources is not None and len(self.sources) != n:
            raise ValidationError("sources must align with items")
        vectors = [it for it in self.items if not isinstance(it, GrayImage)]
        if vectors and len({np.asarray(v).shape for v in vectors}) > 1:
            raise ValidationError("all feature vectors must have the same length")

    @classmethod
    def from_arrays(cls, X, y, seed: int = 0, train_fraction: float = TRAIN_FRACTION) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        train, test = stratified_split(y, seed, train_fraction)
        return cls(items=list(X), labels=np.asarray(y), train=train, test=test)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def is_image_data(self) -> bool:
        return bool(self.items) and isinstance(self.items[0], GrayImage)

    def matrix(self, indices: Sequence[int], target: Tuple[int, int] = DEFAULT_TARGET) -> np.ndarray:
        """Feature rows for ``indices``; images are featurized (and cached per target)."""
        indices = np.asarray(indices, dtype=np.int64)
        if not self.is_image_data:
            return np.stack([np.asarray(self.items[i], dtype=np.float64) for i in indices])
        if target not in self._features:
            self._features[target] = feature_matrix(self.items, target)
        return self._features[target][indices]

    def tensor(self, indices: Sequence[int]) -> np.ndarray:
        """(len(indices), H, W) images in [0, 1]; the full stack is built once and cached."""
        if not self.is_image_data:
            raise ValidationError("tensor() needs image items")
        if self._tensor is None:
            self._tensor = image_tensor(self.items)
        return self._tensor[np.asarray(indices, dtype=np.int64)]

    def restrict(self, positions: Sequence[int], items: Optional[Sequence[Item]] = None) -> "Dataset":
        """
        Keep only ``positions`` (optionally replacing their items), preserving
        each kept item's train/test membership.
        """
        positions = [int(p) for p in positions]
        new_items = list(items) if items is not None else [self.items[p] for p in positions]
        if len(new_items) != len(positions):
            raise ValidationError("replacement items must align with positions")
        train_set, test_set = set(self.train.tolist()), set(self.test.tolist())
        train = [i for i, p in enumerate(positions) if p in train_set]
        test = [i for i, p in enumerate(positions) if p in test_set]
        sources = [self.sources[p] for p in positions] if self.sources is not None else None
        return Dataset(items=new_items, labels=self.labels[positions], train=np.array(train, dtype=np.int64),
                       test=np.array(test, dtype=np.int64), sources=sources)
