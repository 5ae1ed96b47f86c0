import numpy as np
import pytest

from mri_slice_bench.dataset import Dataset, stratified_split
from mri_slice_bench.exceptions import ValidationError
from mri_slice_bench.preprocess import GrayImage


def test_stratified_split_counts():
    labels = [0] * 800 + [1] * 800
    train, test = stratified_split(labels, seed=42)
    assert train.size == 1280 and test.size == 320
    assert np.intersect1d(train, test).size == 0
    assert np.sum(np.asarray(labels)[train]) == 640


def test_stratified_split_rounds_half_up():
    train, test = stratified_split([0] * 5 + [1] * 3, seed=0, train_fraction=0.5)
    assert train.size == 3 + 2
    assert test.size == 2 + 1


def test_stratified_split_is_seeded():
    labels = [0, 1] * 20
    a, b = stratified_split(labels, 3), stratified_split(labels, 3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_dataset_validation():
    with pytest.raises(ValidationError):
        Dataset(items=[np.zeros(2)], labels=[2], train=[0], test=[])
    with pytest.raises(ValidationError):
        Dataset(items=[np.zeros(2), np.zeros(2)], labels=[0, 1], train=[0, 1], test=[1])
    with pytest.raises(ValidationError):
        Dataset(items=[np.zeros(2), np.zeros(3)], labels=[0, 1], train=[0], test=[1])


def test_restrict_keeps_split_membership():
    items = [GrayImage(np.full((4, 4), v)) for v in range(6)]
    data = Dataset(items=items, labels=[0, 0, 0, 1, 1, 1], train=[0, 1, 3, 4], test=[2, 5],
                   sources=[("a", i) for i in range(6)])
    replaced = [GrayImage(np.full((4, 4), 200)) for _ in range(3)]
    sub = data.restrict([1, 2, 5], replaced)
    assert sub.labels.tolist() == [0, 0, 1]
    assert sub.train.tolist() == [0]
    assert sub.test.tolist() == [1, 2]
    assert sub.sources == [("a", 1), ("a", 2), ("a", 5)]
    assert sub.items[0].pixels[0, 0] == 200


def test_matrix_featurizes_images_once():
    items = [GrayImage(np.full((8, 8), 255))] * 4
    data = Dataset(items=items, labels=[0, 1, 0, 1], train=[0, 1], test=[2, 3])
    X = data.matrix(data.train, (4, 4))
    assert X.shape == (2, 16)
    assert data.matrix(data.test, (4, 4)) is not X
    assert len(data._features) == 1


def test_tensor_stacks_images_once():
    items = [GrayImage(np.full((3, 5), v)) for v in (0, 51, 102, 255)]
    data = Dataset(items=items, labels=[0, 1, 0, 1], train=[0, 1], test=[2, 3])
    T = data.tensor(data.test)
    assert T.shape == (2, 3, 5)
    assert T[:, 0, 0].tolist() == [0.4, 1.0]
    cached = data._tensor
    data.tensor(data.train)
    assert data._tensor is cached
