from __future__ import annotations
import argparse
import logging
import pathlib
import sys

from .bench import (
    convert_directory,
    evaluate_model,
    prepare_stage,
    run_bench,
    train_model,
    write_bench,
)
from .config import load_config
from .exceptions import (
    MalformedCsvError,
    MetricsError,
    ModelError,
    NiftiError,
    NoInputError,
    OutputError,
    PipelineError,
    SliceBenchError,
    ValidationError,
)
from .model_io import load_model, model_kind, save_model
from .phantom import export_phantoms
from .plot import plot_history
from .utils import MODEL_NAMES, normalize_models

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42

# Exit codes: 2 validation/config, 3 input parsing, 4 output, 5 training/model
_EXIT_CODES = (
    (ValidationError, 2),
    (NiftiError, 3),
    (MalformedCsvError, 3),
    (NoInputError, 3),
    (OutputError, 4),
    (PipelineError, 5),
    (ModelError, 5),
    (MetricsError, 5),
)


def exit_code_for(exc: BaseException) -> int:
    for cls, code in _EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _add_common(p: argparse.ArgumentParser, config: bool = True, seed: bool = True) -> None:
    if seed:
        p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                       help=f"Top-level seed; every random component derives from it (default: {DEFAULT_SEED}).")
    if config:
        p.add_argument("--config", type=pathlib.Path,
                       help="TOML file with pipeline and training settings.")
    p.add_argument("--verbose", "-v", action="store_true", help="Log progress at DEBUG level.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mri-slice-bench",
        description=(
            "Slice NIfTI-1 MRI volumes into 2D images, preprocess them (grayscale, edge-slice clipping, "
            "histogram equalization) and benchmark RF / GBT / CNN classifiers before vs. after preprocessing."
        )
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-phantom", help="Write synthetic AD/NL phantom volumes as NIfTI-1.")
    p.add_argument("--n-per-class", type=int, default=50, help="Volumes per class (default: 50).")
    p.add_argument("--out", required=True, type=pathlib.Path, help="Output data directory.")
    _add_common(p, config=False)

    for name, help_text in (("convert", "Write the quantized slices of every volume as PGM."),
                            ("preprocess", "Run the preprocessing pipeline and write kept slices as PGM.")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("in_dir", type=pathlib.Path, help="Directory with .nii volumes (searched recursively).")
        p.add_argument("--out", required=True, type=pathlib.Path, help="Output directory for PGM files.")
        _add_common(p, config=(name == "preprocess"), seed=False)

    p = sub.add_parser("bench", help="Train every model before and after preprocessing; write bench.csv.")
    p.add_argument("data_dir", type=pathlib.Path, help="Directory with AD/ and NL/ sub-directories.")
    p.add_argument("--models", nargs="+", default=[",".join(MODEL_NAMES)],
                   help="Models to run, comma separated or repeated (default: rf,gbt,cnn).")
    p.add_argument("--epochs", type=int, help="CNN epochs (default: 40, or the config value).")
    p.add_argument("--out", type=pathlib.Path, default=pathlib.Path("bench_out"),
                   help="Directory for bench.csv and history files.")
    _add_common(p)

    p = sub.add_parser("train", help="Train one model on a stage's train split and save it.")
    p.add_argument("data_dir", type=pathlib.Path)
    p.add_argument("--model", required=True, choices=MODEL_NAMES)
    p.add_argument("--stage", default="after", choices=["before", "after"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True, type=pathlib.Path, help="Model file (.npz).")
    _add_common(p)

    p = sub.add_parser("eval", help="Score a saved model on the test split of a data directory.")
    p.add_argument("data_dir", type=pathlib.Path)
    p.add_argument("model_file", type=pathlib.Path)
    _add_common(p)

    p = sub.add_parser("plot", help="Plot a history CSV (accuracy and loss vs. epoch) as SVG.")
    p.add_argument("history", type=pathlib.Path)
    p.add_argument("--out", required=True, type=pathlib.Path, help="Output .svg path.")
    _add_common(p, config=False, seed=False)
    return parser


def _configs(args: argparse.Namespace):
    pipeline, train = load_config(getattr(args, "config", None), seed=getattr(args, "seed", DEFAULT_SEED))
    if getattr(args, "epochs", None) is not None:
        train = train.replace(epochs=args.epochs)
    return pipeline, train


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def cmd_gen_phantom(args: argparse.Namespace) -> int:
    written = export_phantoms(args.out, args.n_per_class, args.seed)
    print(f"Wrote {len(written)} volumes under {args.out}")
    return 0


def cmd_convert(args: argparse.Namespace) -> int:
    pipeline = _configs(args)[0] if args.command == "preprocess" else None
    summary = convert_directory(args.in_dir, args.out, pipeline)
    print(f"Wrote {len(summary.written)} slices to {args.out}")
    if not summary.manifest.empty:
        kept = int(summary.manifest["kept"].sum())
        print(f"Kept {kept} of {len(summary.manifest)} slices (manifest: {args.out / 'manifest.csv'})")
    for path, err in summary.failures:
        print(f"[{type(err).__name__}] {path}: {err}", file=sys.stderr)
    return exit_code_for(summary.failures[0][1]) if summary.failures else 0


def cmd_bench(args: argparse.Namespace) -> int:
    models = normalize_models(args.models)
    if not models:
        raise ValidationError("No models selected.")
    pipeline, train = _configs(args)
    report = run_bench(args.data_dir, models, args.seed, pipeline, train)
    written = write_bench(report, args.out)

    print("=== Benchmark ===")
    print(f"{'model':<6}{'stage':<8}{'accuracy':>10}{'sensitivity':>13}{'specificity':>13}{'seconds':>10}")
    for row in report.rows:
        if row.error:
            print(f"{row.model:<6}{row.stage:<8}  FAILED: {row.error}")
            continue
        m = row.metrics
        print(f"{row.model:<6}{row.stage:<8}{_fmt(m.accuracy):>10}{_fmt(m.sensitivity):>13}"
              f"{_fmt(m.specificity):>13}{row.seconds:>10.3f}")
    for kind in models:
        decrease = report.percentage_decrease(kind)
        if decrease is not None:
            print(f"{kind}: training time decreased by {decrease:.2f}%")
    print("Files:")
    for p in written:
        print(f"  - {p}")
    return 5 if report.failed else 0


def cmd_train(args: argparse.Namespace) -> int:
    pipeline, train = _configs(args)
    data = prepare_stage(args.data_dir, args.seed, pipeline, args.stage)
    model, _, timing = train_model(args.model, data, train)
    path = save_model(model, args.out, stage=args.stage, seed=args.seed)
    print(f"Trained {args.model} ({args.stage}) on {data.train.size} slices in {timing.seconds:.3f}s -> {path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    pipeline, train = _configs(args)
    model, stage, seed = load_model(args.model_file)
    if seed is None:
        seed = args.seed
    elif seed != args.seed:
        logger.warning("Using split seed %d stored in %s instead of --seed %d", seed, args.model_file, args.seed)
    data = prepare_stage(args.data_dir, seed, pipeline, stage)
    cm, metrics = evaluate_model(model, data, train)
    print(f"{model_kind(model)} ({stage}) on {cm.total} test slices: accuracy={_fmt(metrics.accuracy)} "
          f"sensitivity={_fmt(metrics.sensitivity)} specificity={_fmt(metrics.specificity)} "
          f"(tp={cm.tp} fn={cm.fn} fp={cm.fp} tn={cm.tn})")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    path = plot_history(args.history, args.out)
    print(f"Wrote {path}")
    return 0


_COMMANDS = {
    "gen-phantom": cmd_gen_phantom,
    "convert": cmd_convert,
    "preprocess": cmd_convert,
    "bench": cmd_bench,
    "train": cmd_train,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logger.debug("Running %s with %s", args.command, vars(args))
    try:
        return _COMMANDS[args.command](args)
    except SliceBenchError as e:
        print(f"[{type(e).__name__}] {e}", file=sys.stderr)
        return exit_code_for(e)
    except OSError as e:
        print(f"[UnexpectedIOError] {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
