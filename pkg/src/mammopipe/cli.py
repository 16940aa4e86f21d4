"""Command-line entry point: ingest, synthetic, preprocess, run, report."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .pipeline import DATA_ENV, PipelineError, RunConfig, ingest, preprocess_dataset, report, run
from .synthetic import generate_synthetic

# flags that map one-to-one onto RunConfig fields
_SCALAR_FLAGS = {
    "seed": int, "condition": str, "train_fraction": float,
    "window": int, "dev_factor": float, "k": int,
    "family": str, "levels": int, "channel_level": int,
    "copies": int, "layout": str,
    "input_size": int, "max_epochs": int, "mini_batch": int, "learn_rate": float,
    "head_lr_multiplier": float, "momentum": float, "freeze_layers": int, "link": str,
    "backbone_path": str, "proxy_images": int, "proxy_epochs": int, "proxy_learn_rate": float,
    "model_name": str,
}
_RANGE_FLAGS = ("rotation", "translate", "scale", "shear")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--data", dest="dataset_path", help=f"dataset directory (default: ${DATA_ENV})")
    p.add_argument("--output-dir")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    p.add_argument("--no-balance", dest="balance", action="store_false", default=None)
    p.add_argument("--no-global-pool", dest="global_pool", action="store_false", default=None)
    for name, typ in _SCALAR_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    for name in _RANGE_FLAGS:
        p.add_argument("--" + name, dest=name, type=float, nargs=2, metavar=("LO", "HI"))


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
    for name in ("dataset_path", "output_dir", "balance", "global_pool", *_SCALAR_FLAGS, *_RANGE_FLAGS):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    cfg = RunConfig.from_dict(data)
    if not cfg.dataset_path and os.environ.get(DATA_ENV):
        cfg.dataset_path = os.environ[DATA_ENV]
    return cfg


def _check_paths(cfg: RunConfig) -> None:
    data = Path(cfg.resolved_dataset())
    if not data.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {data}")
    if cfg.backbone_path and not Path(cfg.backbone_path).is_file():
        raise FileNotFoundError(f"backbone checkpoint not found: {cfg.backbone_path}")


def cmd_ingest(args) -> int:
    path = args.dataset_path or os.environ.get(DATA_ENV)
    if not path:
        print(f"error: no dataset path (use --data or set {DATA_ENV})", file=sys.stderr)
        return 2
    try:
        summary = ingest(path, args.output_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"total records: {summary['total']}  usable images: {summary['usable_images']}")
    for key in ("abnormality_counts", "severity_counts"):
        print(key.replace("_", " ") + ": " + ", ".join(f"{c}={n}" for c, n in summary[key].items()))
    for d in summary["discrepancies"]:
        print("discrepancy:", json.dumps(d, sort_keys=True))
    for kind in ("missing_files", "corrupt_files"):
        for item in summary[kind]:
            print(f"{kind[:-6]}: {item if isinstance(item, str) else json.dumps(item, sort_keys=True)}")
    bad = len(summary["missing_files"]) + len(summary["corrupt_files"])
    return 1 if bad else 0


def cmd_synthetic(args) -> int:
    records = generate_synthetic(args.output_dir, args.n, args.size, args.seed)
    print(f"wrote {len(records)} images and Info.txt to {args.output_dir}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = resolve_config(args)
    if args.dry_run:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return 0
    _check_paths(cfg)
    written = preprocess_dataset(cfg)
    print(f"wrote {len(written)} files to {cfg.output_dir}")
    return 0


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    if args.dry_run:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return 0
    _check_paths(cfg)
    summary = run(cfg)
    v = summary["validation"]
    aucs = ", ".join(f"{c}={'n/a' if a is None else f'{a:.3f}'}" for c, a in v["auc"].items())
    print(f"[{cfg.condition}] validation AUC: {aucs}  (mean {v['mean_auc']:.3f})")
    print(f"artifacts in {cfg.output_dir}")
    return 0


def cmd_report(args) -> int:
    table = report(args.runs, args.output_dir)
    print(table.to_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mammopipe", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse metadata and images, print counts and problems")
    p.add_argument("--data", dest="dataset_path")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synthetic", help="generate a seeded synthetic dataset")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--n", type=int, default=120)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("preprocess", help="write filtered/segmented/wavelet channels and pyramids")
    _add_config_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("run", help="split, augment, train the cascade and evaluate")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="combine run directories into AUC tables and ROC plots")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
