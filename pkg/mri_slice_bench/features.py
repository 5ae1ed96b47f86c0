"""Image -> model input conversions shared by the tree learners and the CNN."""
from __future__ import annotations
import functools
from typing import Sequence, Tuple

import numpy as np

from .exceptions import ValidationError
from .preprocess import GrayImage

DEFAULT_TARGET = (16, 16)


@functools.lru_cache(maxsize=64)
def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix; row i averages the input span covered by output cell i."""
    edges = np.arange(n_out + 1, dtype=np.float64) * n_in / n_out
    lo, hi = edges[:-1, None], edges[1:, None]
    j = np.arange(n_in, dtype=np.float64)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1.0) - np.maximum(lo, j), 0.0, None)
    weights = overlap / (n_in / n_out)
    weights.setflags(write=False)
    return weights


def featurize(img: GrayImage, target: Tuple[int, int] = DEFAULT_TARGET) -> np.ndarray:
    """Area-average downsample to target (width, height), scaled to [0, 1]; row-major vector."""
    width, height = target
    if width < 1 or height < 1:
        raise ValidationError(f"feature target must be positive, got {target}")
    pixels = img.pixels.astype(np.float64)
    resized = _area_weights(img.height, height) @ pixels @ _area_weights(img.width, width).T
    return np.clip(resized.ravel() / 255.0, 0.0, 1.0)


def feature_matrix(images: Sequence[GrayImage], target: Tuple[int, int] = DEFAULT_TARGET) -> np.ndarray:
    if not images:
        return np.zeros((0, target[0] * target[1]))
    return np.stack([featurize(img, target) for img in images])


def image_tensor(images: Sequence[GrayImage]) -> np.ndarray:
    """(n, height, width) float64 array in [0, 1]."""
    if not images:
        raise ValidationError("image_tensor needs at least one image")
    shape = images[0].pixels.shape
    if any(img.pixels.shape != shape for img in images):
        raise ValidationError("all images must share one shape")
    return np.stack([img.pixels for img in images]).astype(np.float64) / 255.0
