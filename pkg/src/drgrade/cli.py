"""Command-line interface: train, evaluate, predict, summary.

Flag precedence is command line > config file > defaults; the config file
is a flat ``key = value`` document using the same keys as the flags
(underscored). Exit codes: 0 success, 2 configuration error, 3 data or
checkpoint error, 4 numerical abort, 5 every predict input failed.

Heavy modules are imported only after argument parsing so that --threads
can cap BLAS worker counts via environment variables.
"""

from __future__ import annotations

import argparse
import os
import sys

MODEL_CHOICES = ("unet", "stacked_unet")
OPTIMIZER_CHOICES = ("sgd", "adam")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_PREDICT_FAILED = 5

# key -> (default, type); paths default to None
DEFAULTS: dict[str, tuple] = {
    "model": ("unet", str),
    "epochs": (5, int),
    "batch_size": (16, int),
    "lr": (1e-3, float),
    "optimizer": ("adam", str),
    "seed": (0, int),
    "threads": (None, int),
    "base_filters": (64, int),
    "input_size": (256, int),
    "val_fraction": (0.2, float),
    "manifest": (None, str),
    "images": (None, str),
    "checkpoint": (None, str),
    "history_out": (None, str),
    "csv": (None, str),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drgrade",
        description="Train and evaluate UNET / Stacked-UNET 5-grade "
                    "diabetic-retinopathy classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--model", choices=MODEL_CHOICES, help="architecture to build")
        p.add_argument("--base-filters", dest="base_filters", type=int,
                       help="channel count of the first encoder block (default 64)")
        p.add_argument("--input-size", dest="input_size", type=int,
                       help="square input extent in pixels (default 256)")
        p.add_argument("--seed", type=int, help="seed for every random draw")
        p.add_argument("--threads", type=int, help="cap BLAS worker threads")

    p_train = sub.add_parser("train", help="train a model and write checkpoint + history")
    add_shared(p_train)
    p_train.add_argument("--manifest", help="CSV with header id_code,diagnosis")
    p_train.add_argument("--images", help="directory of <id_code>.png/.jpg files")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--lr", type=float, help="learning rate (default 1e-3)")
    p_train.add_argument("--optimizer", choices=OPTIMIZER_CHOICES)
    p_train.add_argument("--val-fraction", dest="val_fraction", type=float)
    p_train.add_argument("--checkpoint", help="output checkpoint path")
    p_train.add_argument("--history-out", dest="history_out", help="output history CSV path")

    p_eval = sub.add_parser("evaluate", help="metrics + confusion matrix on the validation split")
    add_shared(p_eval)
    p_eval.add_argument("--manifest")
    p_eval.add_argument("--images")
    p_eval.add_argument("--val-fraction", dest="val_fraction", type=float)
    p_eval.add_argument("--checkpoint", help="trained checkpoint to load")
    p_eval.add_argument("--csv", help="optional per-class metrics CSV output")

    p_pred = sub.add_parser("predict", help="grade images with a trained checkpoint")
    add_shared(p_pred)
    p_pred.add_argument("--checkpoint", help="trained checkpoint to load")
    p_pred.add_argument("paths", nargs="+", help="image files or directories")

    p_sum = sub.add_parser("summary", help="print the shape ledger and parameter counts")
    add_shared(p_sum)
    return parser


def _parse_config_file(path) -> dict:
    from .errors import ConfigError, DataError

    if not os.path.isfile(path):
        raise DataError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            _, typ = DEFAULTS[key]
            try:
                values[key] = typ(raw)
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: cannot parse {raw!r} as {typ.__name__}") from None
    return values


def _merge_config(args: argparse.Namespace) -> dict:
    from .errors import ConfigError

    merged = {k: default for k, (default, _) in DEFAULTS.items()}
    if getattr(args, "config", None):
        merged.update(_parse_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged["model"] not in MODEL_CHOICES:
        raise ConfigError(f"model must be one of {MODEL_CHOICES}, got {merged['model']!r}")
    if merged["optimizer"] not in OPTIMIZER_CHOICES:
        raise ConfigError(f"optimizer must be one of {OPTIMIZER_CHOICES}")
    if merged["threads"] is not None and merged["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    return merged


def _apply_threads(threads) -> None:
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


def _unet_config(cfg: dict):
    from .model import UNetConfig

    size = cfg["input_size"]
    uc = UNetConfig(input_hw=(size, size), base_filters=cfg["base_filters"])
    uc.validate()
    return uc


def _build_model(cfg: dict, init: bool):
    from .model import build_stacked_unet, build_unet

    builder = build_unet if cfg["model"] == "unet" else build_stacked_unet
    return builder(_unet_config(cfg), seed=cfg["seed"], init=init)


def _node_param_count(graph, node: str) -> int:
    return sum(spec.size for key, spec in graph.param_specs.items()
               if key in (f"{node}.kernel", f"{node}.bias", f"{node}.weight"))


def _ledger_lines(graph) -> list[str]:
    lines = [f"{'node':<24} {'output':>16} {'params':>14}"]
    for name, dims in graph.shape_ledger():
        shape = "x".join(str(d) for d in dims)
        lines.append(f"{name:<24} {shape:>16} {_node_param_count(graph, name):>14}")
    lines.append(f"{'total':<24} {'':>16} {graph.parameter_count():>14}")
    return lines


def _model_display_name(kind: str) -> str:
    return "UNET" if kind == "unet" else "Stacked UNET"


def _load_val_split(cfg: dict):
    from .data import DatasetManifest, SplitSpec, load_dataset, read_manifest
    from .errors import DataError

    if not cfg["manifest"] or not cfg["images"]:
        raise DataError("--manifest and --images are required")
    manifest = read_manifest(cfg["manifest"], cfg["images"])
    if manifest.missing:
        raise DataError(f"missing image files for ids: {', '.join(manifest.missing[:10])}")
    spec = SplitSpec(validation_fraction=cfg["val_fraction"], seed=cfg["seed"])
    return load_dataset(manifest, spec, size=cfg["input_size"])


def cmd_train(cfg: dict) -> int:
    from .fileio import atomic_write_text
    from .model import save_checkpoint
    from .training import TrainConfig, history_csv, summary_table, train

    data = _load_val_split(cfg)
    graph = _build_model(cfg, init=True)
    print("\n".join(_ledger_lines(graph)))
    tc = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                     optimizer=cfg["optimizer"], learning_rate=cfg["lr"],
                     seed=cfg["seed"])
    tc.validate()
    history = train(graph, data, tc)
    save_checkpoint(graph, cfg["checkpoint"] or "drgrade.ckpt")
    atomic_write_text(cfg["history_out"] or "history.csv", history_csv(history))
    if history:
        print()
        print(summary_table(_model_display_name(cfg["model"]), history[-2:]))
    return EXIT_OK


def _format_confusion(cm) -> str:
    k = cm.shape[0]
    lines = ["true\\pred " + "".join(f"{c:>8}" for c in range(k))]
    for r in range(k):
        lines.append(f"{r:>9} " + "".join(f"{cm[r, c]:>8}" for c in range(k)))
    return "\n".join(lines)


def cmd_evaluate(cfg: dict) -> int:
    from .errors import DataError
    from .fileio import atomic_write_text
    from .metrics import per_class_report
    from .model import load_checkpoint
    from .training import evaluate, summary_table

    if not cfg["checkpoint"]:
        raise DataError("--checkpoint is required")
    graph = _build_model(cfg, init=False)
    load_checkpoint(cfg["checkpoint"], graph)
    data = _load_val_split(cfg)
    row, cm = evaluate(graph, data.val)
    row.split = "val"
    print(summary_table(_model_display_name(cfg["model"]), [row]))
    print()
    print(_format_confusion(cm))
    if cfg["csv"]:
        lines = ["class,precision,recall,f1,support"]
        for rec in per_class_report(cm):
            lines.append(f"{rec['class']},{rec['precision']:.6f},{rec['recall']:.6f},"
                         f"{rec['f1']:.6f},{rec['support']}")
        atomic_write_text(cfg["csv"], "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_predict(cfg: dict, paths: list[str]) -> int:
    from .data import IMAGE_EXTENSIONS, decode_image, preprocess
    from .errors import DataError, DrGradeError
    from .model import load_checkpoint
    from .ops import softmax_cross_entropy

    import numpy as np

    if not cfg["checkpoint"]:
        raise DataError("--checkpoint is required")
    graph = _build_model(cfg, init=False)
    load_checkpoint(cfg["checkpoint"], graph)

    files: list[str] = []
    for path in paths:
        if os.path.isdir(path):
            files += sorted(os.path.join(path, f) for f in os.listdir(path)
                            if f.lower().endswith(IMAGE_EXTENSIONS))
        else:
            files.append(path)
    if not files:
        raise DataError("no image files to predict")

    failures = 0
    for path in files:
        name = os.path.splitext(os.path.basename(path))[0]
        try:
            x = preprocess(decode_image(path), size=cfg["input_size"])[None]
            logits, _ = graph.forward(x)
            _, probs, _ = softmax_cross_entropy(logits, np.zeros(1, dtype=np.int64))
            grade = int(probs[0].argmax())
            probs_txt = " ".join(f"{p:.6f}" for p in probs[0])
            print(f"{name} {grade} {probs_txt}")
        except DrGradeError as exc:
            failures += 1
            print(f"{name}: error: {exc}", file=sys.stderr)
    return EXIT_PREDICT_FAILED if failures == len(files) else EXIT_OK


def cmd_summary(cfg: dict) -> int:
    graph = _build_model(cfg, init=False)
    print(_model_display_name(cfg["model"]))
    print("\n".join(_ledger_lines(graph)))
    return EXIT_OK


def main(argv=None) -> int:
    from .errors import (CheckpointError, ConfigError, DataError, NumericalError,
                         ShapeError)

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _merge_config(args)
        _apply_threads(cfg["threads"])
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, args.paths)
        if args.command == "summary":
            return cmd_summary(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"drgrade: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, ShapeError) as exc:
        print(f"drgrade: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"drgrade: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
