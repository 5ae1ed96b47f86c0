"""
Directory-level workflows: slice conversion, preprocessing with a
manifest, and the before/after classifier benchmark.

Data directories follow the layout written by ``export_phantoms``::

    <data_dir>/AD/*.nii   (label 1)
    <data_dir>/NL/*.nii   (label 0)

"Before" is the quantized raw slices; "after" is the same slices run
through ``run_pipeline`` and restricted to the kept ones, so both stages
share one train/test split and one seed.
"""
from __future__ import annotations
import logging
import math
import pathlib
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .boosting import gbt_predict_batch, gbt_train
from .cnn import EpochRecord, cnn_predict_batch, cnn_train
from .config import TrainConfig
from .dataset import LABELS_BY_NAME, Dataset, stratified_split
from .exceptions import (
    EmptyInputError,
    MetricsError,
    ModelError,
    NiftiError,
    NoInputError,
    NonFiniteLossError,
    PipelineError,
    SliceBenchError,
    ValidationError,
)
from .forest import rf_predict_batch, rf_train
from .metrics import (
    ConfusionMatrix,
    Metrics,
    Stopwatch,
    TimingRecord,
    confusion_from_predictions,
    metrics_from_cm,
    percentage_decrease,
)
from .model_io import Model, model_kind
from .preprocess import GrayImage, Image, PipelineConfig, run_pipeline
from .slicer import slice_volume
from .utils import derive_seed, volume_stem
from .volume_io import Volume3D, load_volumes
from .writer import history_frame, read_pgm, write_frame, write_slices

logger = logging.getLogger(__name__)

STAGES = ("before", "after")
BENCH_COLUMNS = [
    "model", "stage", "accuracy", "sensitivity", "specificity", "tp", "fn", "fp", "tn",
    "seconds", "n_train", "n_test", "n_features", "percentage_decrease", "error",
]
MANIFEST_COLUMNS = ["volume", "slice_index", "slice_name", "channels", "kept", "foreground_fraction"]
TIMING_COLUMNS = ["volume", "stage", "seconds"]
_SLICE_FILE = re.compile(r"^(?P<stem>.+)_Image_(?P<index>\d+)\.p[gp]m$")


@dataclass
class LabeledVolume:
    name: str
    label: int
    volume: Volume3D


@dataclass
class PreprocessOutcome:
    dataset: Dataset
    manifest: pd.DataFrame
    timings: pd.DataFrame
    failures: List[Tuple[str, SliceBenchError]] = field(default_factory=list)


@dataclass
class ConvertSummary:
    written: List[pathlib.Path]
    manifest: pd.DataFrame
    timings: pd.DataFrame
    failures: List[Tuple[str, SliceBenchError]]


# ---------------------------------------------------------------------------
# Input discovery
# ---------------------------------------------------------------------------

def find_volume_files(in_dir: pathlib.Path) -> List[pathlib.Path]:
    in_dir = pathlib.Path(in_dir)
    if not in_dir.is_dir():
        raise NoInputError(f"no input volumes: {in_dir} is not a directory")
    return sorted(p for p in in_dir.rglob("*") if p.is_file() and p.name.lower().endswith((".nii", ".nii.gz")))


def load_labeled_volumes(data_dir: pathlib.Path) -> List[LabeledVolume]:
    """Every volume under <data_dir>/AD and <data_dir>/NL; 4D files contribute one volume per time point."""
    data_dir = pathlib.Path(data_dir)
    volumes: List[LabeledVolume] = []
    for class_name in ("NL", "AD"):
        for path in find_volume_files(data_dir / class_name) if (data_dir / class_name).is_dir() else []:
            name = f"{class_name}/{volume_stem(path.name)}"
            for vol in load_volumes(path, name=name):
                volumes.append(LabeledVolume(name=vol.name, label=LABELS_BY_NAME[class_name], volume=vol))
    if not volumes:
        raise NoInputError(f"no input volumes under {data_dir} (expected AD/*.nii and NL/*.nii)")
    logger.info("Loaded %d volumes from %s", len(volumes), data_dir)
    return volumes


# ---------------------------------------------------------------------------
# Datasets for the two stages
# ---------------------------------------------------------------------------

def build_raw_dataset(volumes: Sequence[LabeledVolume], seed: int) -> Dataset:
    """Quantized slices of every volume (per-volume range), stratified split from the seed."""
    items: List[GrayImage] = []
    labels: List[int] = []
    sources: List[Tuple[str, int]] = []
    for lv in volumes:
        for s in slice_volume(lv.volume):
            items.append(s.to_gray())
            labels.append(lv.label)
            sources.append((lv.name, s.index))
    train, test = stratified_split(labels, derive_seed(seed, "split"))
    return Dataset(items=items, labels=np.asarray(labels), train=train, test=test, sources=sources)


def _group_by_volume(sources: Sequence[Tuple[str, int]]) -> "OrderedDict[str, List[int]]":
    groups: "OrderedDict[str, List[int]]" = OrderedDict()
    for pos, (name, _) in enumerate(sources):
        groups.setdefault(name, []).append(pos)
    return groups


def apply_preprocessing(raw: Dataset, config: PipelineConfig) -> PreprocessOutcome:
    """
    Run the pipeline volume by volume and keep the surviving slices. A
    volume whose slices are all clipped contributes nothing and is listed
    in ``failures``.
    """
    if raw.sources is None:
        raise ValidationError("apply_preprocessing needs a dataset with slice sources")
    kept_positions: List[int] = []
    kept_images: List[GrayImage] = []
    manifest, timings, failures = [], [], []
    for name, positions in _group_by_volume(raw.sources).items():
        images = [raw.items[p] for p in positions]
        try:
            result = run_pipeline(images, config)
        except PipelineError as e:
            logger.warning("%s: %s", name, e)
            failures.append((name, e))
            manifest += [_manifest_row(name, raw.sources[p][1], 1, False, math.nan) for p in positions]
            continue
        kept = set(result.kept_indices)
        for i, p in enumerate(positions):
            fraction = result.fractions[i] if result.fractions else math.nan
            manifest.append(_manifest_row(name, raw.sources[p][1], result.channels, i in kept, fraction))
        kept_positions += [positions[i] for i in result.kept_indices]
        kept_images += result.images
        timings += [{"volume": name, "stage": stage, "seconds": sec} for stage, sec in result.timings.items()]
    if not kept_positions:
        raise NoInputError("no slices left after preprocessing")
    dataset = raw.restrict(kept_positions, kept_images)
    logger.info("Preprocessing kept %d of %d slices", len(dataset), len(raw))
    return PreprocessOutcome(dataset=dataset, manifest=pd.DataFrame(manifest, columns=MANIFEST_COLUMNS),
                             timings=pd.DataFrame(timings, columns=TIMING_COLUMNS), failures=failures)


def _manifest_row(volume: str, index: int, channels: int, kept: bool, fraction: float) -> dict:
    return {"volume": volume, "slice_index": index, "slice_name": f"Image_{index}", "channels": channels,
            "kept": kept, "foreground_fraction": fraction}


def prepare_stage(data_dir: pathlib.Path, seed: int, pipeline: PipelineConfig, stage: str) -> Dataset:
    if stage not in STAGES:
        raise ValidationError(f"stage must be one of {STAGES}, got {stage!r}")
    raw = build_raw_dataset(load_labeled_volumes(data_dir), seed)
    return raw if stage == "before" else apply_preprocessing(raw, pipeline).dataset


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

def train_model(kind: str, data: Dataset, cfg: TrainConfig) -> Tuple[Model, Optional[List[EpochRecord]], TimingRecord]:
    """Fit one classifier; returns (model, per-epoch history or None, training time)."""
    # featurization and tensor building are data loading, not training
    if kind in ("rf", "gbt"):
        data.matrix(data.train, cfg.feature_target)
    elif kind == "cnn" and data.is_image_data:
        data.tensor(data.train)
    with Stopwatch(f"train_{kind}") as sw:
        if kind == "rf":
            model, history = rf_train(data, cfg), None
        elif kind == "gbt":
            model, history = gbt_train(data, cfg), None
        elif kind == "cnn":
            model, history = cnn_train(data, cfg)
        else:
            raise ValidationError(f"Unknown model '{kind}'")
    logger.info("Trained %s on %d slices in %.3fs", kind, data.train.size, sw.seconds)
    return model, history, sw.record()


def predict_test(model: Model, data: Dataset, cfg: TrainConfig) -> np.ndarray:
    if data.test.size == 0:
        raise EmptyInputError("test split is empty")
    kind = model_kind(model)
    if kind == "cnn":
        return cnn_predict_batch(model, data.tensor(data.test))[0]
    X = data.matrix(data.test, cfg.feature_target)
    predict = rf_predict_batch if kind == "rf" else gbt_predict_batch
    return predict(model, X)[0]


def evaluate_model(model: Model, data: Dataset, cfg: TrainConfig) -> Tuple[ConfusionMatrix, Metrics]:
    pred = predict_test(model, data, cfg)
    cm = confusion_from_predictions(data.labels[data.test].tolist(), pred.tolist())
    return cm, metrics_from_cm(cm)


def n_features(kind: str, data: Dataset, cfg: TrainConfig) -> int:
    if kind == "cnn" and data.is_image_data:
        return data.items[0].height * data.items[0].width
    return cfg.feature_target[0] * cfg.feature_target[1]


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    model: str
    stage: str
    cm: Optional[ConfusionMatrix] = None
    metrics: Optional[Metrics] = None
    timing: Optional[TimingRecord] = None
    n_train: int = 0
    n_test: int = 0
    n_features: int = 0
    error: Optional[str] = None

    @property
    def seconds(self) -> Optional[float]:
        return self.timing.seconds if self.timing else None


@dataclass
class BenchReport:
    rows: List[BenchRow]
    histories: Dict[str, List[EpochRecord]] = field(default_factory=dict)
    manifest: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=MANIFEST_COLUMNS))
    timings: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=TIMING_COLUMNS))

    def row(self, model: str, stage: str) -> BenchRow:
        for r in self.rows:
            if r.model == model and r.stage == stage:
                return r
        raise KeyError((model, stage))

    @property
    def failed(self) -> List[BenchRow]:
        return [r for r in self.rows if r.error is not None]

    def percentage_decrease(self, model: str) -> Optional[float]:
        before, after = self.row(model, "before").seconds, self.row(model, "after").seconds
        if before is None or after is None or before <= 0:
            return None
        return percentage_decrease(before, after)

    def to_frame(self) -> pd.DataFrame:
        records = []
        for r in self.rows:
            m, cm = r.metrics, r.cm
            records.append({
                "model": r.model,
                "stage": r.stage,
                "accuracy": m.accuracy if m else None,
                "sensitivity": m.sensitivity if m else None,
                "specificity": m.specificity if m else None,
                "tp": cm.tp if cm else None,
                "fn": cm.fn if cm else None,
                "fp": cm.fp if cm else None,
                "tn": cm.tn if cm else None,
                "seconds": r.seconds,
                "n_train": r.n_train,
                "n_test": r.n_test,
                "n_features": r.n_features,
                "percentage_decrease": self.percentage_decrease(r.model) if r.stage == "after" else None,
                "error": r.error,
            })
        return pd.DataFrame(records, columns=BENCH_COLUMNS)

    def confusion_frame(self) -> pd.DataFrame:
        records = []
        for r in self.rows:
            if r.cm is None:
                continue
            for actual, predicted, count in (("AD", "AD", r.cm.tp), ("AD", "NL", r.cm.fn),
                                             ("NL", "AD", r.cm.fp), ("NL", "NL", r.cm.tn)):
                records.append({"model": r.model, "stage": r.stage, "actual": actual,
                                "predicted": predicted, "count": count})
        return pd.DataFrame(records, columns=["model", "stage", "actual", "predicted", "count"])


def _bench_cell(kind: str, stage: str, data: Dataset, cfg: TrainConfig,
                histories: Dict[str, List[EpochRecord]]) -> BenchRow:
    row = BenchRow(model=kind, stage=stage, n_train=int(data.train.size), n_test=int(data.test.size),
                   n_features=n_features(kind, data, cfg))
    try:
        model, history, row.timing = train_model(kind, data, cfg)
        if history is not None:
            histories[stage] = history
        row.cm, row.metrics = evaluate_model(model, data, cfg)
    except NonFiniteLossError as e:
        histories[stage] = list(e.history)
        row.error = f"{type(e).__name__}: {e}"
    except (ModelError, MetricsError, ValidationError) as e:
        row.error = f"{type(e).__name__}: {e}"
    if row.error:
        logger.error("%s/%s failed: %s", kind, stage, row.error)
    return row


def run_bench(data_dir: pathlib.Path, models: Sequence[str], seed: int,
              pipeline: PipelineConfig, cfg: TrainConfig) -> BenchReport:
    """
    Train every model once per stage on the same split with the same seed
    and score it on the test split. Failed cells carry an error message;
    the remaining cells still run.
    """
    if not models:
        raise ValidationError("no models selected")
    cfg = cfg.replace(seed=seed)
    raw = build_raw_dataset(load_labeled_volumes(data_dir), seed)
    outcome = apply_preprocessing(raw, pipeline)
    datasets = {"before": raw, "after": outcome.dataset}
    rows: List[BenchRow] = []
    histories: Dict[str, List[EpochRecord]] = {}
    for kind in models:
        for stage in STAGES:
            rows.append(_bench_cell(kind, stage, datasets[stage], cfg, histories))
    return BenchReport(rows=rows, histories=histories, manifest=outcome.manifest, timings=outcome.timings)


def write_bench(report: BenchReport, out_dir: pathlib.Path) -> List[pathlib.Path]:
    out_dir = pathlib.Path(out_dir)
    written = [
        write_frame(report.to_frame(), out_dir / "bench.csv"),
        write_frame(report.confusion_frame(), out_dir / "confusion.csv"),
        write_frame(report.manifest, out_dir / "manifest.csv"),
        write_frame(report.timings, out_dir / "stage_timings.csv"),
    ]
    for stage, history in report.histories.items():
        written.append(write_frame(history_frame(history), out_dir / f"history_cnn_{stage}.csv"))
    return written


# ---------------------------------------------------------------------------
# convert / preprocess
# ---------------------------------------------------------------------------

def _slice_groups(in_dir: pathlib.Path) -> "OrderedDict[pathlib.Path, List[Tuple[int, pathlib.Path]]]":
    """PGM/PPM slice files grouped by <dir>/<stem>, ordered by slice index."""
    groups: "OrderedDict[pathlib.Path, List[Tuple[int, pathlib.Path]]]" = OrderedDict()
    for path in sorted(pathlib.Path(in_dir).rglob("*")):
        m = _SLICE_FILE.match(path.name)
        if path.is_file() and m:
            groups.setdefault(path.parent / m["stem"], []).append((int(m["index"]), path))
    for members in groups.values():
        members.sort()
    return groups


def _convert_one(name: str, rel_parent: pathlib.Path, stem: str, images: Sequence[Image],
                 indices: Sequence[int], config: PipelineConfig, out_dir: pathlib.Path,
                 written: list, manifest: list, timings: list) -> None:
    result = run_pipeline(images, config)
    kept = set(result.kept_indices)
    for i, index in enumerate(indices):
        fraction = result.fractions[i] if result.fractions else math.nan
        manifest.append(_manifest_row(name, index, result.channels, i in kept, fraction))
    timings += [{"volume": name, "stage": stage, "seconds": sec} for stage, sec in result.timings.items()]
    written += write_slices(result.images, [indices[i] for i in result.kept_indices], stem, out_dir / rel_parent)


def convert_directory(in_dir: pathlib.Path, out_dir: pathlib.Path,
                      config: Optional[PipelineConfig] = None) -> ConvertSummary:
    """
    Slice every volume under ``in_dir`` into PGM files under ``out_dir``
    (keeping sub-directories). Without ``config`` the slices are written as
    quantized; with it they pass through ``run_pipeline`` first. Existing
    PGM/PPM slice sets (<stem>_Image_<n>.pgm) are accepted as input too.
    Per-file failures are collected and the remaining files still run.
    """
    in_dir, out_dir = pathlib.Path(in_dir), pathlib.Path(out_dir)
    config = config or PipelineConfig.raw()
    files = find_volume_files(in_dir)
    slice_sets = _slice_groups(in_dir) if not files else OrderedDict()
    if not files and not slice_sets:
        raise NoInputError(f"no input volumes in {in_dir}")
    written: List[pathlib.Path] = []
    manifest: list = []
    timings: list = []
    failures: List[Tuple[str, SliceBenchError]] = []

    for path in files:
        rel_parent = path.parent.relative_to(in_dir)
        stem = volume_stem(path.name)
        try:
            for vol in load_volumes(path, name=stem):
                with Stopwatch("slice") as sw:
                    slices = slice_volume(vol)
                timings.append({"volume": vol.name, "stage": "slice", "seconds": sw.seconds})
                _convert_one(vol.name, rel_parent, vol.name, [s.to_gray() for s in slices],
                             [s.index for s in slices], config, out_dir, written, manifest, timings)
        except (NiftiError, PipelineError) as e:
            logger.error("%s: %s", path, e)
            failures.append((str(path), e))

    for base, members in slice_sets.items():
        rel_parent = base.parent.relative_to(in_dir)
        try:
            images = [read_pgm(p) for _, p in members]
            _convert_one(base.name, rel_parent, base.name, images, [i for i, _ in members],
                         config, out_dir, written, manifest, timings)
        except (ValidationError, PipelineError) as e:
            logger.error("%s: %s", base, e)
            failures.append((str(base), e))

    summary = ConvertSummary(written=written, manifest=pd.DataFrame(manifest, columns=MANIFEST_COLUMNS),
                             timings=pd.DataFrame(timings, columns=TIMING_COLUMNS), failures=failures)
    write_frame(summary.manifest, out_dir / "manifest.csv")
    write_frame(summary.timings, out_dir / "stage_timings.csv")
    return summary
