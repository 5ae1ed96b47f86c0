"""
Pipeline and training configuration, loaded from a TOML file.

Example::

    do_gray = true
    do_equalize = true

    [clip]
    kind = "foreground"   # foreground | central | off
    tau = 0.10

    [train]
    epochs = 40

    [train.rf]
    n_trees = 100
"""
from __future__ import annotations
import dataclasses
import pathlib
import tomllib
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Tuple

from .exceptions import ValidationError
from .preprocess import ClipPolicy, PipelineConfig

FEATURE_SUBSAMPLES = ("sqrt", "all")


def _check_positive(obj: Any, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if value <= 0:
            raise ValidationError(f"{type(obj).__name__}.{name} must be > 0, got {value}")


@dataclass(frozen=True)
class RfParams:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    feature_subsample: str = "sqrt"

    def __post_init__(self) -> None:
        _check_positive(self, "n_trees", "max_depth", "min_leaf")
        if self.feature_subsample not in FEATURE_SUBSAMPLES:
            raise ValidationError(f"rf.feature_subsample must be one of {FEATURE_SUBSAMPLES}")


@dataclass(frozen=True)
class GbtParams:
    n_rounds: int = 100
    max_depth: int = 4
    reg_lambda: float = 1.0
    gamma: float = 0.0
    eta: float = 0.1

    def __post_init__(self) -> None:
        _check_positive(self, "n_rounds", "max_depth", "reg_lambda")
        if self.gamma < 0 or self.eta < 0:
            raise ValidationError("gbt.gamma and gbt.eta must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 0.01
    batch_size: int = 32
    seed: int = 0
    rf: RfParams = field(default_factory=RfParams)
    gbt: GbtParams = field(default_factory=GbtParams)
    feature_target: Tuple[int, int] = (16, 16)

    def __post_init__(self) -> None:
        _check_positive(self, "epochs", "batch_size")
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if min(self.feature_target) < 1:
            raise ValidationError(f"feature target must be positive, got {self.feature_target}")

    def replace(self, **changes: Any) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _take(section: Mapping[str, Any], allowed: tuple[str, ...], where: str) -> dict:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ValidationError(f"Unknown key(s) in [{where}]: {', '.join(unknown)}")
    return dict(section)


def pipeline_from_mapping(data: Mapping[str, Any]) -> PipelineConfig:
    top = {k: v for k, v in data.items() if k in ("do_gray", "do_equalize")}
    clip_section = _take(data.get("clip", {}), ("kind", "tau", "keep_lo", "keep_hi"), "clip")
    clip: Optional[ClipPolicy]
    if clip_section.get("kind", "foreground") == "off":
        clip = None
    else:
        try:
            clip = ClipPolicy(**clip_section)
        except ValueError as exc:
            raise ValidationError(f"Invalid [clip] section: {exc}") from exc
    return PipelineConfig(do_gray=bool(top.get("do_gray", True)),
                          do_equalize=bool(top.get("do_equalize", True)), clip=clip)


def train_from_mapping(data: Mapping[str, Any], seed: int = 0) -> TrainConfig:
    train = _take(data.get("train", {}), ("epochs", "learning_rate", "batch_size", "rf", "gbt"), "train")
    rf = _take(train.pop("rf", {}), ("n_trees", "max_depth", "min_leaf", "feature_subsample"), "train.rf")
    gbt = _take(train.pop("gbt", {}), ("n_rounds", "max_depth", "lambda", "gamma", "eta"), "train.gbt")
    if "lambda" in gbt:
        gbt["reg_lambda"] = gbt.pop("lambda")
    feats = _take(data.get("features", {}), ("width", "height"), "features")
    target = (int(feats.get("width", 16)), int(feats.get("height", 16)))
    return TrainConfig(seed=seed, rf=RfParams(**rf), gbt=GbtParams(**gbt), feature_target=target, **train)


def load_config(path: Optional[pathlib.Path], seed: int = 0) -> Tuple[PipelineConfig, TrainConfig]:
    """Read a TOML config; ``None`` yields the defaults."""
    if path is None:
        return PipelineConfig(), TrainConfig(seed=seed)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"Config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"Config file {path} is not valid TOML: {exc}") from exc
    unknown = sorted(set(data) - {"do_gray", "do_equalize", "clip", "train", "features"})
    if unknown:
        raise ValidationError(f"Unknown top-level key(s) in {path}: {', '.join(unknown)}")
    try:
        return pipeline_from_mapping(data), train_from_mapping(data, seed=seed)
    except TypeError as exc:
        raise ValidationError(f"Invalid config {path}: {exc}") from exc
