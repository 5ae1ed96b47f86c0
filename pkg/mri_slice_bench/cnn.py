"""
Two-convolution-layer CNN in numpy with hand-written backpropagation.

conv(k x k, valid) -> relu -> maxpool(p) -> conv -> relu -> maxpool -> dense -> softmax

Trained with plain mini-batch gradient descent on mean cross-entropy.
All arrays are float64.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import TrainConfig
from .dataset import Dataset
from .exceptions import NonFiniteLossError, ShapeMismatchError, ValidationError
from .preprocess import GrayImage
from .utils import derive_seed

logger = logging.getLogger(__name__)

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")


@dataclass(frozen=True)
class CnnArch:
    input_shape: Tuple[int, int] = (32, 32)
    conv1_filters: int = 8
    conv1_kernel: int = 3
    conv2_filters: int = 16
    conv2_kernel: int = 3
    pool: int = 2
    n_classes: int = 2

    def __post_init__(self) -> None:
        for name in ("conv1_filters", "conv1_kernel", "conv2_filters", "conv2_kernel", "pool", "n_classes"):
            if getattr(self, name) < 1:
                raise ValidationError(f"CnnArch.{name} must be >= 1")
        if self.pooled2_shape[0] < 1 or self.pooled2_shape[1] < 1:
            raise ShapeMismatchError(f"input {self.input_shape} is too small for {self}")

    def _after(self, shape: Tuple[int, int], kernel: int) -> Tuple[int, int]:
        conv = (shape[0] - kernel + 1, shape[1] - kernel + 1)
        return conv[0] // self.pool, conv[1] // self.pool

    @property
    def pooled1_shape(self) -> Tuple[int, int]:
        return self._after(self.input_shape, self.conv1_kernel)

    @property
    def pooled2_shape(self) -> Tuple[int, int]:
        return self._after(self.pooled1_shape, self.conv2_kernel)

    @property
    def dense_inputs(self) -> int:
        h, w = self.pooled2_shape
        return self.conv2_filters * h * w

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        k1, k2 = self.conv1_kernel, self.conv2_kernel
        return {
            "conv1_w": (self.conv1_filters, 1, k1, k1),
            "conv1_b": (self.conv1_filters,),
            "conv2_w": (self.conv2_filters, self.conv1_filters, k2, k2),
            "conv2_b": (self.conv2_filters,),
            "dense_w": (self.n_classes, self.dense_inputs),
            "dense_b": (self.n_classes,),
        }


@dataclass(eq=False)
class CnnModel:
    arch: CnnArch
    params: Dict[str, np.ndarray]

    def __post_init__(self) -> None:
        for name, shape in self.arch.param_shapes().items():
            if name not in self.params:
                raise ValidationError(f"missing CNN parameter {name}")
            if self.params[name].shape != shape:
                raise ShapeMismatchError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> "CnnModel":
        return CnnModel(self.arch, {k: v.copy() for k, v in self.params.items()})


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


def init_cnn(arch: CnnArch, seed: int) -> CnnModel:
    """Weights ~ U[-s, s], s = sqrt(6 / (fan_in + fan_out)); biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
            continue
        if len(shape) == 4:
            receptive = shape[2] * shape[3]
            fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
        else:
            fan_in, fan_out = shape[1], shape[0]
        s = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-s, s, size=shape)
    return CnnModel(arch, params)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: (N, C, H, W) x (F, C, k, k) -> (N, F, H-k+1, W-k+1)."""
    k = w.shape[-1]
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return np.einsum("nchwij,fcij->nfhw", win, w, optimize=True) + b[None, :, None, None]


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray,
                    need_dx: bool = True) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    k = w.shape[-1]
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    dw = np.einsum("nfhw,nchwij->fcij", dout, win, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    if not need_dx:
        return None, dw, db
    padded = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    dwin = sliding_window_view(padded, (k, k), axis=(2, 3))
    dx = np.einsum("nfhwij,fcij->nchw", dwin, w[:, :, ::-1, ::-1], optimize=True)
    return dx, dw, db


def _pool_windows(x: np.ndarray, p: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho, wo = h // p, w // p
    crop = x[:, :, : ho * p, : wo * p]
    return crop.reshape(n, c, ho, p, wo, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, p * p)


def maxpool_forward(x: np.ndarray, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """Non-overlapping p x p max pooling (trailing rows/cols dropped); returns argmax per window."""
    win = _pool_windows(x, p)
    arg = win.argmax(axis=-1)
    return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], arg


def maxpool_backward(dout: np.ndarray, arg: np.ndarray, x_shape: Tuple[int, ...], p: int) -> np.ndarray:
    n, c, ho, wo = dout.shape
    dwin = np.zeros((n, c, ho, wo, p * p))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dcrop = dwin.reshape(n, c, ho, wo, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * p, wo * p)
    dx = np.zeros(x_shape)
    dx[:, :, : ho * p, : wo * p] = dcrop
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(model: CnnModel, X: np.ndarray) -> Tuple[np.ndarray, dict]:
    """Logits for a (N, H, W) batch in [0, 1], plus the cache backprop needs."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1:] != model.arch.input_shape:
        raise ShapeMismatchError(f"expected (N, {model.arch.input_shape[0]}, {model.arch.input_shape[1]}) input, got {X.shape}")
    P, p = model.params, model.arch.pool
    x = X[:, None, :, :]
    z1 = conv2d_forward(x, P["conv1_w"], P["conv1_b"])
    a1 = np.maximum(z1, 0.0)
    p1, arg1 = maxpool_forward(a1, p)
    z2 = conv2d_forward(p1, P["conv2_w"], P["conv2_b"])
    a2 = np.maximum(z2, 0.0)
    p2, arg2 = maxpool_forward(a2, p)
    flat = p2.reshape(X.shape[0], -1)
    logits = flat @ P["dense_w"].T + P["dense_b"]
    cache = {"x": x, "z1": z1, "p1": p1, "arg1": arg1, "z2": z2, "p2": p2, "arg2": arg2, "flat": flat}
    return logits, cache


def backward(model: CnnModel, cache: dict, dlogits: np.ndarray) -> Dict[str, np.ndarray]:
    P, p = model.params, model.arch.pool
    grads = {
        "dense_w": dlogits.T @ cache["flat"],
        "dense_b": dlogits.sum(axis=0),
    }
    dp2 = (dlogits @ P["dense_w"]).reshape(cache["p2"].shape)
    dz2 = maxpool_backward(dp2, cache["arg2"], cache["z2"].shape, p) * (cache["z2"] > 0)
    dp1, grads["conv2_w"], grads["conv2_b"] = conv2d_backward(dz2, cache["p1"], P["conv2_w"])
    dz1 = maxpool_backward(dp1, cache["arg1"], cache["z1"].shape, p) * (cache["z1"] > 0)
    _, grads["conv1_w"], grads["conv1_b"] = conv2d_backward(dz1, cache["x"], P["conv1_w"], need_dx=False)
    return grads


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    picked = probs[np.arange(y.size), y]
    return float(-np.mean(np.log(np.clip(picked, 1e-300, None))))


def loss_and_grads(model: CnnModel, X: np.ndarray, y: np.ndarray) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    """Mean cross-entropy over the batch, its gradient for every parameter, and the softmax."""
    y = np.asarray(y, dtype=np.int64)
    logits, cache = forward_batch(model, X)
    probs = softmax(logits)
    onehot = np.zeros_like(probs)
    onehot[np.arange(y.size), y] = 1.0
    grads = backward(model, cache, (probs - onehot) / y.size)
    return cross_entropy(probs, y), grads, probs


def _as_unit_image(img: Union[GrayImage, np.ndarray]) -> np.ndarray:
    if isinstance(img, GrayImage):
        return img.pixels.astype(np.float64) / 255.0
    return np.asarray(img, dtype=np.float64)


def cnn_forward(model: CnnModel, img: Union[GrayImage, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """(logits, softmax probabilities) for one image; GrayImages are scaled to [0, 1]."""
    x = _as_unit_image(img)
    if x.shape != model.arch.input_shape:
        raise ShapeMismatchError(f"image shape {x.shape} != configured input {model.arch.input_shape}")
    logits, _ = forward_batch(model, x[None])
    return logits[0], softmax(logits)[0]


def cnn_predict_batch(model: CnnModel, X: np.ndarray, batch_size: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """Labels and P(AD) for a (N, H, W) batch."""
    chunks = [softmax(forward_batch(model, X[i : i + batch_size])[0])[:, 1]
              for i in range(0, X.shape[0], batch_size)]
    probs = np.concatenate(chunks) if chunks else np.zeros(0)
    return (probs >= 0.5).astype(np.int64), probs


def _evaluate(model: CnnModel, X: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    if y.size == 0:
        return float("nan"), float("nan")
    _, p1 = cnn_predict_batch(model, X)
    probs = np.stack([1.0 - p1, p1], axis=1)
    return cross_entropy(probs, y), float(np.mean((p1 >= 0.5) == (y == 1)))


def cnn_train(data: Dataset, cfg: TrainConfig,
              arch: Optional[CnnArch] = None) -> Tuple[CnnModel, List[EpochRecord]]:
    """
    Mini-batch gradient descent for ``cfg.epochs`` epochs; the training
    order is reshuffled every epoch from one seeded stream. Returns the model
    and one history record per epoch.
    """
    y_train = data.labels[data.train]
    if np.unique(y_train).size < 2:
        raise ValidationError("CNN training needs both classes in the training split")
    X_train = data.tensor(data.train)
    X_test = data.tensor(data.test) if data.test.size else np.zeros((0, *X_train.shape[1:]))
    y_test = data.labels[data.test]
    arch = arch or CnnArch(input_shape=X_train.shape[1:])
    if arch.input_shape != X_train.shape[1:]:
        raise ShapeMismatchError(f"images are {X_train.shape[1:]}, network expects {arch.input_shape}")

    model = init_cnn(arch, derive_seed(cfg.seed, "cnn-init"))
    shuffle = np.random.default_rng(derive_seed(cfg.seed, "cnn-shuffle"))
    history: List[EpochRecord] = []
    n = y_train.size
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grads, probs = loss_and_grads(model, X_train[batch], y_train[batch])
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"loss became {loss} in epoch {epoch}", last_good_epoch=epoch - 1,
                                         history=history)
            for name in PARAM_NAMES:
                model.params[name] -= cfg.learning_rate * grads[name]
            loss_sum += loss * batch.size
            correct += int(np.sum((probs[:, 1] >= 0.5) == (y_train[batch] == 1)))
        test_loss, test_acc = _evaluate(model, X_test, y_test)
        record = EpochRecord(epoch=epoch, train_loss=loss_sum / n, train_acc=correct / n,
                             test_loss=test_loss, test_acc=test_acc)
        history.append(record)
        logger.info("epoch %d/%d train_loss=%.4f train_acc=%.4f test_acc=%.4f",
                    epoch, cfg.epochs, record.train_loss, record.train_acc, record.test_acc)
    return model, history
