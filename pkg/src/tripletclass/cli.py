"""Command-line entry point: ``tripletclass {prepare,train,evaluate,report,synth,presets}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, TripletClassError


def _image_size(values):
    return [int(v) for v in values] if values else None


def cmd_prepare(args) -> int:
    from .config import load_config_file
    from .pipeline import prepare

    file_values = load_config_file(args.config) if args.config else {}
    root = args.root or file_values.get("dataset_root")
    if not root:
        raise ConfigurationError("dataset_root: pass --root or set it in --config")
    image_size = _image_size(args.image_size) or file_values.get("image_size", [64, 64, 3])
    ratio = args.ratio if args.ratio is not None else file_values.get("split_ratio", 0.8)
    seed = args.seed if args.seed is not None else file_values.get("seed", 0)
    out = Path(args.out or "manifest.json")
    manifest = prepare(root, image_size, ratio, seed, out)
    print(f"manifest: {out} (sha256 {manifest.digest()})")
    train_counts = manifest.class_counts("train")
    val_counts = manifest.class_counts("validation")
    for name in manifest.class_names:
        print(f"{name}\ttrain={train_counts[name]}\tvalidation={val_counts[name]}")
    return 0


def cmd_train(args) -> int:
    from .config import load_config_file, resolve_config
    from .pipeline import run_dir, train_run

    file_values = load_config_file(args.config) if args.config else {}
    overrides = {
        "seed": args.seed, "output_dir": args.out, "dataset_root": args.root, "manifest": args.manifest,
        "epochs": args.epochs, "learning_rate": args.learning_rate, "name": args.name,
    }
    cfg = resolve_config(args.preset, file_values, overrides)
    record = train_run(cfg)
    best = record.data.get("best_val_loss")
    print(f"run: {run_dir(cfg)} best_epoch={record.data.get('best_epoch')} best_val_loss={best:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate_run

    report, record = evaluate_run(args.checkpoint, args.manifest, args.split, args.k, args.out)
    print(f"run: {record.directory} accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f}")
    return 0


def cmd_report(args) -> int:
    from .report import comparison_report

    written = comparison_report(args.runs, args.out, render=not args.no_render)
    for kind in ("csv", "figures"):
        for path in written[kind]:
            print(path)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import make_synthetic_dataset

    root = make_synthetic_dataset(args.out, args.per_class, args.size, args.seed if args.seed is not None else 0)
    print(f"synthetic dataset: {root}")
    return 0


def cmd_presets(args) -> int:
    from .config import PRESETS, load_preset

    if args.name:
        print(load_preset(args.name).to_json(), end="")
    else:
        print("\n".join(sorted(PRESETS)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tripletclass", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="scan a folder-per-class tree and write a split manifest")
    p.add_argument("--root", help="dataset root (<root>/<class>/<images>)")
    p.add_argument("--config")
    p.add_argument("--image-size", nargs=3, metavar=("H", "W", "C"))
    p.add_argument("--ratio", type=float, help="train fraction (default 0.8)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="manifest path (default manifest.json)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one run from a preset and/or config file")
    p.add_argument("--config")
    p.add_argument("--preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory")
    p.add_argument("--root", help="dataset root override")
    p.add_argument("--manifest", help="pre-built manifest to train on")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--name")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True, help="checkpoint sidecar (model.json)")
    p.add_argument("--manifest")
    p.add_argument("--split", default="validation", choices=("train", "validation"))
    p.add_argument("--k", type=int, help="neighbours for KNN evaluation (triplet checkpoints)")
    p.add_argument("--out", help="run directory to write into (default: checkpoint directory)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="compare run records and render figures")
    p.add_argument("runs", nargs="+", help="run directories containing run.json")
    p.add_argument("--out", required=True)
    p.add_argument("--no-render", action="store_true", help="write CSVs only")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write the procedural three-class texture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("presets", help="list presets or print one resolved preset")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except TripletClassError as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {exc.code}: {msg}", file=sys.stderr)
        return exc.exit_status
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: IO: {' '.join(str(exc).split())}", file=sys.stderr)
        return 10


if __name__ == "__main__":
    sys.exit(main())
