"""Command-line entry point.

Subcommands: gen-data, train, eval, gradcheck, shapes, extract-graph, report.
Flag precedence is flags > config file > built-in defaults. Exit codes:
0 success, 1 validation failure, 2 usage error. VIDEOGRAPH_THREADS caps
internal parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import (collect_activation_stacks, confusion_matrix, extract_activity_graph,
                       export_graph, force_layout, write_confusion_csv)
from .checkpoint import CheckpointError, load_checkpoint
from .datasets import load_manifest, write_manifest
from .features import FeatureFileError
from .gradsuite import run_gradient_suite
from .model import shape_inference
from .synthetic import DatasetConfig, PERTURBATION_MODES, generate_samples
from .tensor import ShapeError
from .training import RunConfig, evaluate, train

USAGE_ERROR, VALIDATION_ERROR = 2, 1


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--data", help="dataset directory (train.jsonl/val.jsonl) or manifest file")
    parser.add_argument("--checkpoint", help="checkpoint directory")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--perturb", choices=PERTURBATION_MODES,
                        help="temporal order perturbation for evaluation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="videograph",
                                     description="long-range activity recognition at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen-data", "generate a synthetic activity dataset (manifests + VGFT files)"),
        ("train", "train a model and write checkpoint + metrics.csv"),
        ("eval", "evaluate a checkpoint, optionally with a temporal perturbation"),
        ("gradcheck", "run the finite-difference gradient suites"),
        ("shapes", "print per-stage shape inference for a config"),
        ("extract-graph", "export per-class activity graphs (DOT + JSON)"),
        ("report", "aggregate natural/reversed/random evaluation into a drop table"),
    ]:
        _add_common_flags(sub.add_parser(name, help=help_text))
    return parser


def _require(parser, args, flag: str):
    value = getattr(args, flag.lstrip("-").replace("-", "_"))
    if value is None:
        parser.error(f"{flag} is required for '{args.command}'")
    return value


def _load_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return json.loads(p.read_text())


def _resolve_manifest(data_arg: str, split: str = "val") -> Path:
    p = Path(data_arg)
    if p.is_dir():
        candidate = p / f"{split}.jsonl"
        if not candidate.exists():
            raise FileNotFoundError(f"no {split}.jsonl in {p}")
        return candidate
    if not p.exists():
        raise FileNotFoundError(f"dataset path not found: {p}")
    return p


def _load_eval_inputs(parser, args):
    ckpt_dir = _require(parser, args, "--checkpoint")
    data = _require(parser, args, "--data")
    loaded = load_checkpoint(ckpt_dir)
    k = loaded.config.get("num_classes", loaded.model.config.num_classes)
    dataset = load_manifest(_resolve_manifest(data), num_label_classes=k)
    return loaded, dataset


def cmd_gen_data(parser, args) -> int:
    out = Path(_require(parser, args, "--out"))
    cfg = DatasetConfig(**_load_json(args.config)) if args.config else DatasetConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    train_set = generate_samples(cfg, cfg.train_videos_per_class, salt=0)
    val_set = generate_samples(cfg, cfg.val_videos_per_class, salt=1)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(train_set, out, "train")
    write_manifest(val_set, out, "val")
    (out / "dataset.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(train_set.samples)} train / {len(val_set.samples)} val videos to {out}")
    return 0


def cmd_train(parser, args) -> int:
    config_path = _require(parser, args, "--config")
    out = Path(_require(parser, args, "--out"))
    config = RunConfig.from_dict(_load_json(config_path))
    if args.seed is not None:
        config.seed = args.seed
    if args.perturb is not None:
        config.eval_perturbation = args.perturb

    if args.data:
        train_manifest = _resolve_manifest(args.data, "train")
        val_manifest = _resolve_manifest(args.data, "val")
    elif config.train_manifest:
        train_manifest = Path(config.train_manifest)
        val_manifest = Path(config.val_manifest) if config.val_manifest else None
    else:
        parser.error("--data is required for 'train' (no train_manifest in config)")
    train_ds = load_manifest(train_manifest, num_label_classes=config.num_classes)
    val_ds = load_manifest(val_manifest, num_label_classes=config.num_classes) if val_manifest else None

    model = optimizer = None
    start_epoch = 0
    if args.checkpoint:
        loaded = load_checkpoint(args.checkpoint)
        model, optimizer, start_epoch = loaded.model, loaded.optimizer, loaded.epoch
        print(f"resuming from {args.checkpoint} at epoch {start_epoch}")
    _, log = train(config, train_ds, val_ds, out_dir=out, model=model,
                   optimizer=optimizer, start_epoch=start_epoch)
    last = log.rows[-1]
    print(f"finished epoch {last['epoch']}: train_loss={last['train_loss']:.4f} "
          f"train_acc={last['train_acc']:.3f} val_metric={last['val_metric']:.3f}")
    print(f"checkpoint and metrics.csv written to {out}")
    return 0


def cmd_eval(parser, args) -> int:
    loaded, dataset = _load_eval_inputs(parser, args)
    perturbation = args.perturb or "natural"
    seed = args.seed if args.seed is not None else 0
    result = evaluate(loaded.model, dataset, perturbation=perturbation, seed=seed)
    print(f"{result.metric_name} ({perturbation} order): {result.metric:.4f}")
    if args.out and dataset.label_mode == "single":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        counts = confusion_matrix(result.predictions, result.labels, dataset.num_label_classes)
        write_confusion_csv(counts, out / f"confusion_{perturbation}.csv")
        print(f"confusion matrix written to {out / f'confusion_{perturbation}.csv'}")
    return 0


def cmd_gradcheck(parser, args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = run_gradient_suite(seed=seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:28s} max_rel_err={r.max_error:.3e}")
    failures = [r for r in results if not r.passed]
    if failures:
        worst = max(failures, key=lambda r: r.max_error)
        print(f"gradient check failed: worst op {worst.name} at {worst.max_error:.3e} "
              f"(threshold {worst.threshold:.0e})", file=sys.stderr)
        return VALIDATION_ERROR
    return 0


def cmd_shapes(parser, args) -> int:
    config_path = _require(parser, args, "--config")
    config = RunConfig.from_dict(_load_json(config_path)).model_config()
    for name, shape in shape_inference(config):
        print(f"{name:20s} {shape}")
    return 0


def cmd_extract_graph(parser, args) -> int:
    loaded, dataset = _load_eval_inputs(parser, args)
    out = Path(_require(parser, args, "--out"))
    seed = args.seed if args.seed is not None else 0
    out.mkdir(parents=True, exist_ok=True)
    stacks = collect_activation_stacks(loaded.model, dataset)
    for class_id, stack in stacks.items():
        graph = extract_activity_graph(stack, class_id=class_id)
        graph.positions = force_layout(graph, seed=seed)
        export_graph(graph, "dot", out / f"class_{class_id}.dot")
        export_graph(graph, "json", out / f"class_{class_id}.json")
    print(f"wrote {len(stacks)} class graphs to {out}")
    return 0


def cmd_report(parser, args) -> int:
    loaded, dataset = _load_eval_inputs(parser, args)
    seed = args.seed if args.seed is not None else 0
    rows = []
    natural = None
    for mode in PERTURBATION_MODES:
        result = evaluate(loaded.model, dataset, perturbation=mode, seed=seed)
        if mode == "natural":
            natural = result.metric
        drop = 0.0 if natural in (None, 0.0) else (natural - result.metric) / natural * 100.0
        rows.append({"perturbation": mode, "metric": result.metric, "drop_pct": drop})
    header = f"{'perturbation':14s} {'metric':>8s} {'drop%':>8s}"
    print(header)
    for row in rows:
        print(f"{row['perturbation']:14s} {row['metric']:8.4f} {row['drop_pct']:8.2f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
        lines = ["perturbation,metric,drop_pct"]
        lines += [f"{r['perturbation']},{r['metric']!r},{r['drop_pct']!r}" for r in rows]
        (out / "report.csv").write_text("\n".join(lines) + "\n")
        print(f"report written to {out}")
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "shapes": cmd_shapes,
    "extract-graph": cmd_extract_graph,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return HANDLERS[args.command](parser, args)
    except (ValueError, TypeError, ShapeError, FeatureFileError, CheckpointError,
            FloatingPointError, RuntimeError, FileNotFoundError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR


if __name__ == "__main__":
    sys.exit(main())
