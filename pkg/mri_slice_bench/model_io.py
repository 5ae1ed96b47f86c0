"""
Versioned model files (.npz). Float arrays are stored verbatim, so tree
thresholds and CNN weights round-trip exactly.
"""
from __future__ import annotations
import dataclasses
import json
import logging
import pathlib
from typing import Optional, Union

import numpy as np

from .boosting import GbtModel
from .cnn import CnnArch, CnnModel
from .config import GbtParams, RfParams
from .exceptions import OutputError, ValidationError
from .forest import RandomForestModel
from .trees import Tree

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_TREE_FIELDS = ("feature", "threshold", "left", "right", "value")

Model = Union[RandomForestModel, GbtModel, CnnModel]


def model_kind(model: Model) -> str:
    if isinstance(model, RandomForestModel):
        return "rf"
    if isinstance(model, GbtModel):
        return "gbt"
    if isinstance(model, CnnModel):
        return "cnn"
    raise ValidationError(f"not a model: {type(model).__name__}")


def _pack_trees(trees: list[Tree], arrays: dict) -> None:
    for i, tree in enumerate(trees):
        for name in _TREE_FIELDS:
            arrays[f"tree{i}_{name}"] = getattr(tree, name)


def _unpack_trees(npz, count: int) -> list[Tree]:
    return [Tree(**{name: npz[f"tree{i}_{name}"] for name in _TREE_FIELDS}) for i in range(count)]


def save_model(model: Model, path: pathlib.Path, stage: str = "after",
               seed: Optional[int] = None) -> pathlib.Path:
    """Write a model; ``seed`` is the split seed it was trained with, reused by eval."""
    kind = model_kind(model)
    meta: dict = {"format_version": FORMAT_VERSION, "kind": kind, "stage": stage, "seed": seed}
    arrays: dict = {}
    if kind == "rf":
        meta.update(n_trees=len(model.trees), n_features=model.n_features, single_class=model.single_class,
                    constant_label=model.constant_label, params=dataclasses.asdict(model.params))
        _pack_trees(model.trees, arrays)
    elif kind == "gbt":
        meta.update(n_trees=len(model.trees), n_features=model.n_features, single_class=model.single_class,
                    params=dataclasses.asdict(model.params))
        arrays["base_score"] = np.array(model.base_score)
        arrays["eta"] = np.array(model.eta)
        arrays["train_loss"] = np.asarray(model.train_loss, dtype=np.float64)
        _pack_trees(model.trees, arrays)
    else:
        meta["arch"] = dataclasses.asdict(model.arch)
        arrays.update({f"param_{k}": v for k, v in model.params.items()})
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    path = pathlib.Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
    except OSError as e:
        raise OutputError(f"Failed to write {path}: {e}") from e
    logger.debug("Saved %s model to %s", kind, path)
    return path


def load_model(path: pathlib.Path) -> tuple[Model, str, Optional[int]]:
    """Returns the model, the stage ('before' | 'after') and the split seed it was trained on."""
    try:
        npz = np.load(pathlib.Path(path), allow_pickle=False)
    except (OSError, ValueError) as e:
        raise ValidationError(f"Cannot read model file {path}: {e}") from e
    with npz:
        meta = json.loads(str(npz["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"Unsupported model format version {meta.get('format_version')} in {path}")
        kind = meta["kind"]
        if kind == "rf":
            model: Model = RandomForestModel(
                trees=_unpack_trees(npz, meta["n_trees"]), n_features=meta["n_features"],
                single_class=meta["single_class"], constant_label=meta["constant_label"],
                params=RfParams(**meta["params"]))
        elif kind == "gbt":
            model = GbtModel(
                trees=_unpack_trees(npz, meta["n_trees"]), base_score=float(npz["base_score"]),
                eta=float(npz["eta"]), n_features=meta["n_features"], train_loss=npz["train_loss"].tolist(),
                single_class=meta["single_class"], params=GbtParams(**meta["params"]))
        elif kind == "cnn":
            arch_fields = meta["arch"]
            arch_fields["input_shape"] = tuple(arch_fields["input_shape"])
            arch = CnnArch(**arch_fields)
            model = CnnModel(arch, {name: npz[f"param_{name}"] for name in arch.param_shapes()})
        else:
            raise ValidationError(f"Unknown model kind {kind!r} in {path}")
    return model, meta.get("stage", "after"), meta.get("seed")
