import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mri_slice_bench.boosting import (
    gbt_fit,
    gbt_margin,
    gbt_predict,
    gbt_predict_batch,
    gbt_split_gain,
    gbt_train,
    sigmoid,
)
from mri_slice_bench.config import GbtParams, TrainConfig
from mri_slice_bench.dataset import Dataset
from mri_slice_bench.exceptions import DimensionMismatchError


def separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    f0 = np.concatenate([rng.uniform(0.0, 0.4, n // 2), rng.uniform(0.6, 1.0, n // 2)])
    X = np.column_stack([f0, rng.uniform(0.0, 1.0, n)])
    return Dataset.from_arrays(X, (X[:, 0] > 0.5).astype(np.int64), seed=seed)


def test_split_gain_worked_value():
    # 1/2 [4/3 + 4/3 - 0] - 0
    assert gbt_split_gain(2.0, 2.0, -2.0, 2.0, reg_lambda=1.0, gamma=0.0) == pytest.approx(4.0 / 3.0)


def test_split_gain_gamma_is_subtracted():
    plain = gbt_split_gain(1.0, 3.0, -0.5, 2.0, 1.0, 0.0)
    assert gbt_split_gain(1.0, 3.0, -0.5, 2.0, 1.0, 0.25) == pytest.approx(plain - 0.25)


@settings(max_examples=200)
@given(
    st.floats(-50, 50), st.floats(0.01, 50), st.floats(-50, 50), st.floats(0.01, 50), st.floats(0.01, 10),
)
def test_split_gain_is_symmetric_in_children(GL, HL, GR, HR, lam):
    assert gbt_split_gain(GL, HL, GR, HR, lam, 0.0) == pytest.approx(gbt_split_gain(GR, HR, GL, HL, lam, 0.0))


def test_separable_data_is_learned_perfectly():
    data = separable()
    start = time.monotonic()
    model = gbt_train(data, TrainConfig(gbt=GbtParams(n_rounds=100)))
    assert time.monotonic() - start < 5.0
    labels, _ = gbt_predict_batch(model, data.matrix(data.test))
    assert np.array_equal(labels, data.labels[data.test])


def test_training_loss_is_non_increasing():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(150, 5))
    y = ((X[:, 0] + 0.3 * rng.normal(size=150)) > 0.5).astype(int)
    model = gbt_fit(X, y, GbtParams(n_rounds=100))
    losses = np.asarray(model.train_loss)
    assert losses.size == 101
    assert np.all(np.diff(losses) <= 1e-12)


def test_base_score_is_log_odds_of_positive_rate():
    X = np.arange(8, dtype=float)[:, None]
    y = np.array([0, 0, 0, 0, 0, 0, 1, 1])
    model = gbt_fit(X, y, GbtParams(n_rounds=1))
    assert model.base_score == pytest.approx(np.log(0.25 / 0.75))


def test_zero_shrinkage_predicts_the_base_score():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(30, 3))
    y = (X[:, 0] > 0.3).astype(np.int64)
    model = gbt_fit(X, y, GbtParams(n_rounds=5, eta=0.0))
    assert len(model.trees) == 5
    assert np.array_equal(gbt_margin(model, X), np.full(30, model.base_score))
    assert model.train_loss == [model.train_loss[0]] * 6


def test_balanced_labels_start_at_even_odds():
    X = np.arange(4, dtype=float)[:, None]
    y = np.array([0, 0, 1, 1])
    model = gbt_fit(X, y, GbtParams(n_rounds=1, max_depth=1, eta=1.0))
    assert model.base_score == 0.0
    # gradients are +0.5 / -0.5 and hessians 0.25: leaf weights -1/1.5 and +1/1.5
    tree = model.trees[0]
    assert tree.feature[0] == 0 and tree.threshold[0] == 1.5
    assert tree.value[tree.left[0], 0] == pytest.approx(-2 / 3)
    assert tree.value[tree.right[0], 0] == pytest.approx(2 / 3)


def test_single_class_predicts_constant():
    X = np.zeros((5, 2))
    model = gbt_fit(X, np.zeros(5), GbtParams())
    assert model.single_class and not model.trees
    label, prob = gbt_predict(model, np.zeros(2))
    assert label == 0 and prob < 1e-5


def test_sigmoid_is_stable():
    assert sigmoid(1000.0) == 1.0
    assert sigmoid(-1000.0) == 0.0
    assert sigmoid(0.0) == 0.5


def test_predict_rejects_wrong_dimension():
    model = gbt_train(separable(), TrainConfig(gbt=GbtParams(n_rounds=2)))
    with pytest.raises(DimensionMismatchError):
        gbt_predict(model, np.zeros(5))
