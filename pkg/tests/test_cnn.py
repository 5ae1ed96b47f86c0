import numpy as np
import pytest

from mri_slice_bench.cnn import (
    PARAM_NAMES,
    CnnArch,
    cnn_forward,
    cnn_predict_batch,
    cnn_train,
    conv2d_forward,
    forward_batch,
    init_cnn,
    loss_and_grads,
    maxpool_forward,
)
from mri_slice_bench.config import TrainConfig
from mri_slice_bench.dataset import Dataset, stratified_split
from mri_slice_bench.exceptions import NonFiniteLossError, ShapeMismatchError, ValidationError
from mri_slice_bench.preprocess import GrayImage
from mri_slice_bench.utils import derive_seed

SMALL = CnnArch(input_shape=(6, 6), conv1_filters=2, conv1_kernel=3, conv2_filters=3, conv2_kernel=1, pool=2)


def _pattern(model, X):
    _, cache = forward_batch(model, X)
    return [cache["z1"] > 0, cache["arg1"], cache["z2"] > 0, cache["arg2"]]


def _same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_central_differences(seed):
    rng = np.random.default_rng(seed)
    model = init_cnn(SMALL, seed)
    for name in ("conv1_b", "conv2_b", "dense_b"):
        model.params[name] = rng.normal(scale=0.1, size=model.params[name].shape)
    X = rng.uniform(size=(3, 6, 6))
    y = rng.integers(0, 2, 3)
    _, grads, _ = loss_and_grads(model, X, y)
    base_pattern = _pattern(model, X)
    eps = 1e-4
    checked = 0
    for name in PARAM_NAMES:
        theta = model.params[name]
        for idx in np.ndindex(theta.shape):
            original = theta[idx]
            theta[idx] = original + eps
            plus, plus_pattern = loss_and_grads(model, X, y)[0], _pattern(model, X)
            theta[idx] = original - eps
            minus, minus_pattern = loss_and_grads(model, X, y)[0], _pattern(model, X)
            theta[idx] = original
            if not (_same_pattern(base_pattern, plus_pattern) and _same_pattern(base_pattern, minus_pattern)):
                continue
            numeric = (plus - minus) / (2 * eps)
            analytic = grads[name][idx]
            rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            assert rel < 1e-4, (name, idx, analytic, numeric)
            checked += 1
    assert checked > 0


def _direct_conv(x, w, b):
    c_in, h, wd = x.shape
    f, _, k, _ = w.shape
    out = np.zeros((f, h - k + 1, wd - k + 1))
    for fi in range(f):
        for i in range(h - k + 1):
            for j in range(wd - k + 1):
                out[fi, i, j] = np.sum(x[:, i:i + k, j:j + k] * w[fi]) + b[fi]
    return out


def _direct_pool(x, p):
    c, h, w = x.shape
    out = np.zeros((c, h // p, w // p))
    for ci in range(c):
        for i in range(h // p):
            for j in range(w // p):
                out[ci, i, j] = x[ci, i * p:(i + 1) * p, j * p:(j + 1) * p].max()
    return out


def _direct_logits(model, img):
    P, p = model.params, model.arch.pool
    a1 = _direct_pool(np.maximum(_direct_conv(img[None], P["conv1_w"], P["conv1_b"]), 0.0), p)
    a2 = _direct_pool(np.maximum(_direct_conv(a1, P["conv2_w"], P["conv2_b"]), 0.0), p)
    return P["dense_w"] @ a2.ravel() + P["dense_b"]


def test_forward_matches_direct_convolution():
    arch = CnnArch(input_shape=(11, 10), conv1_filters=3, conv2_filters=4)
    rng = np.random.default_rng(0)
    for trial in range(100):
        model = init_cnn(arch, trial)
        model.params["conv1_b"] = rng.normal(scale=0.1, size=3)
        img = rng.uniform(size=(11, 10))
        logits, probs = cnn_forward(model, img)
        assert np.allclose(logits, _direct_logits(model, img), rtol=0, atol=1e-10)
        assert probs.sum() == pytest.approx(1.0)


def test_zero_parameters_give_even_odds():
    model = init_cnn(CnnArch(input_shape=(12, 12)), 0)
    for name in PARAM_NAMES:
        model.params[name][...] = 0.0
    X = np.random.default_rng(3).uniform(size=(4, 12, 12))
    logits, probs = cnn_forward(model, X[0])
    assert logits.tolist() == [0.0, 0.0]
    assert probs.tolist() == [0.5, 0.5]
    loss, _, _ = loss_and_grads(model, X, np.array([0, 1, 1, 0]))
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_unit_one_by_one_filter_is_identity():
    x = np.random.default_rng(4).uniform(size=(2, 1, 5, 7))
    assert np.array_equal(conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1)), x)

    arch = CnnArch(input_shape=(6, 6), conv1_filters=1, conv1_kernel=1, conv2_filters=1, conv2_kernel=1, pool=2)
    model = init_cnn(arch, 0)
    model.params["conv1_w"][...] = 1.0
    model.params["conv1_b"][...] = 0.0
    X = np.random.default_rng(5).uniform(size=(3, 6, 6))
    _, cache = forward_batch(model, X)
    assert np.array_equal(cache["z1"][:, 0], X)


def test_maxpool_drops_trailing_rows():
    x = np.arange(25, dtype=float).reshape(1, 1, 5, 5)
    out, _ = maxpool_forward(x, 2)
    assert out[0, 0].tolist() == [[6.0, 8.0], [16.0, 18.0]]


def test_forward_accepts_gray_images_and_checks_shape():
    model = init_cnn(CnnArch(input_shape=(12, 12)), 0)
    logits, probs = cnn_forward(model, GrayImage(np.full((12, 12), 255)))
    assert logits.shape == (2,) and probs.shape == (2,)
    with pytest.raises(ShapeMismatchError):
        cnn_forward(model, GrayImage(np.zeros((13, 12))))


def _bright_vs_dark(n_per_class=20, size=12, seed=0):
    rng = np.random.default_rng(seed)
    items, labels = [], []
    for label, level in ((0, 40), (1, 200)):
        for _ in range(n_per_class):
            items.append(GrayImage(np.clip(rng.normal(level, 20, size=(size, size)), 0, 255).round()))
            labels.append(label)
    train, test = stratified_split(labels, seed)
    return Dataset(items=items, labels=np.array(labels), train=train, test=test)


def test_training_learns_an_easy_task():
    data = _bright_vs_dark()
    model, history = cnn_train(data, TrainConfig(epochs=30, learning_rate=0.1, batch_size=8, seed=1))
    assert [r.epoch for r in history] == list(range(1, 31))
    assert history[-1].train_loss < history[0].train_loss
    assert history[-1].test_acc == 1.0
    labels, probs = cnn_predict_batch(model, data.tensor(data.test))
    assert np.array_equal(labels, data.labels[data.test])
    assert np.all((probs >= 0) & (probs <= 1))


def test_training_is_deterministic_per_seed():
    data = _bright_vs_dark(n_per_class=6)
    cfg = TrainConfig(epochs=3, learning_rate=0.05, batch_size=4, seed=5)
    (m1, h1), (m2, h2) = cnn_train(data, cfg), cnn_train(data, cfg)
    assert h1 == h2
    for name in PARAM_NAMES:
        assert np.array_equal(m1.params[name], m2.params[name])


def test_zero_learning_rate_leaves_weights_and_history_flat():
    data = _bright_vs_dark(n_per_class=6)
    cfg = TrainConfig(epochs=3, learning_rate=0.0, batch_size=4, seed=8)
    model, history = cnn_train(data, cfg)
    start = init_cnn(CnnArch(input_shape=(12, 12)), derive_seed(cfg.seed, "cnn-init"))
    for name in PARAM_NAMES:
        assert np.array_equal(model.params[name], start.params[name])
    first = history[0]
    for record in history[1:]:
        assert record.train_loss == pytest.approx(first.train_loss, rel=1e-12)
        assert record.train_acc == first.train_acc
        assert (record.test_loss, record.test_acc) == (first.test_loss, first.test_acc)


def test_divergence_reports_last_good_epoch():
    data = _bright_vs_dark(n_per_class=6)
    with np.errstate(all="ignore"), pytest.raises(NonFiniteLossError) as info:
        cnn_train(data, TrainConfig(epochs=3, learning_rate=1e300, batch_size=2, seed=0))
    assert info.value.last_good_epoch in (0, 1, 2)
    assert len(info.value.history) == info.value.last_good_epoch


def test_training_needs_both_classes():
    data = _bright_vs_dark(n_per_class=4)
    one_class = data.restrict([i for i in range(len(data)) if data.labels[i] == 0])
    with pytest.raises(ValidationError):
        cnn_train(one_class, TrainConfig(epochs=1))


@pytest.mark.slow
def test_forty_epoch_history_on_phantom_slices():
    from mri_slice_bench.phantom import generate_dataset
    data = generate_dataset(5, base_seed=7)
    _, history = cnn_train(data, TrainConfig(epochs=40, seed=7))
    assert len(history) == 40
