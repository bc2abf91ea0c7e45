"""Command-line entry points.

Commands: prepare, train, sweep, ablate-augmentation, evaluate, report,
preview. Configuration comes from an optional YAML file (--config) with
CLI flags taking precedence; the merged spec is snapshotted into every
output directory. Exit codes: 0 success, 1 validation error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .augment import (
    TRANSFORM_KINDS,
    EvalSet,
    TransformSpec,
    build_training_set,
    write_preview_grid,
)
from .backbone import build_model, load_checkpoint
from .config import RunSpec
from .errors import ConfigurationError
from .ingest import (
    Label,
    compute_norm_stats,
    grayscale_audit,
    load_image,
    read_manifest,
    read_stats,
    rebalance_downsample,
    repartition_eval,
    scan_dataset,
    to_grayscale,
    write_manifest,
    write_stats,
)
from .metrics import evaluate_model, select_best_run
from .report import (
    MetricsRow,
    read_metrics_json,
    render_curves,
    render_table,
    row_from_run_dir,
    write_metrics_json,
)
from .trainer import RunHistory, ablation_ranking, augmentation_ablation, fit, sweep

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        raise ConfigurationError(message)


def _add_common(parser):
    parser.add_argument("--config", help="YAML config file; flags override it")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="run seed (default 0)")


def _add_model_flags(parser):
    parser.add_argument("--backbone", choices=["resnet18", "densenet121"])
    parser.add_argument("--strategy", choices=["frozen", "single_channel", "full"])
    parser.add_argument("--n-neurons", type=int, dest="n_neurons")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--no-pretrained", action="store_true",
                        help="train from random init (no ImageNet weights)")
    parser.add_argument("--weights", dest="weights_path",
                        help="explicit pretrained weight file")
    parser.add_argument("--transform", choices=list(TRANSFORM_KINDS),
                        help="augmentation transform for the training set")
    parser.add_argument("--prepared", dest="prepared_dir",
                        help="directory with manifest.csv and stats.json from 'prepare'")


def build_parser() -> _Parser:
    parser = _Parser(prog="xraytl", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="scan, repartition, balance, compute stats")
    _add_common(p)
    p.add_argument("--data-root", dest="data_root",
                   help="dataset root with train/val/test class directories")

    p = sub.add_parser("train", help="train one strategy and evaluate on test")
    _add_common(p)
    _add_model_flags(p)

    p = sub.add_parser("sweep", help="train one strategy across the head-width grid")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--grid", type=int, nargs="+", help="head widths to sweep")

    p = sub.add_parser("ablate-augmentation",
                       help="rank transforms by test accuracy of a small reference net")
    _add_common(p)
    p.add_argument("--prepared", dest="prepared_dir")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prepared", dest="prepared_dir")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")

    p = sub.add_parser("report", help="aggregate run directories into table and curves")
    _add_common(p)
    p.add_argument("--runs", nargs="+", required=True, help="run directories")

    p = sub.add_parser("preview", help="write a 2x2 grid of the four transforms")
    _add_common(p)
    p.add_argument("--image", required=True)

    return parser


def _load_spec(args) -> RunSpec:
    spec = RunSpec.from_yaml(args.config) if getattr(args, "config", None) else RunSpec()
    fields = {f.name for f in dataclasses.fields(RunSpec)}
    overrides = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "no_pretrained", False):
        overrides["pretrained"] = False
    return spec.with_overrides(**overrides)


def _require(value, flag: str):
    if value is None:
        raise ConfigurationError(f"{flag} is required (flag or config file)")
    return value


def _read_prepared(spec: RunSpec):
    prepared = Path(_require(spec.prepared_dir, "--prepared"))
    manifest_path = prepared / "manifest.csv"
    stats_path = prepared / "stats.json"
    for path in (manifest_path, stats_path):
        if not path.is_file():
            raise ConfigurationError(f"missing prepared input: {path} (run 'xraytl prepare')")
    return read_manifest(manifest_path), read_stats(stats_path)


def _make_out_dir(spec: RunSpec) -> Path:
    out = Path(_require(spec.out_dir, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    spec.to_yaml(out / "config.yaml")
    return out


def cmd_prepare(args) -> int:
    spec = _load_spec(args)
    root = _require(spec.data_root, "--data-root")
    out = _make_out_dir(spec)
    indexes = scan_dataset(root)
    audit = grayscale_audit(indexes["train"])
    val_idx, test_idx = repartition_eval(indexes["test"], indexes["val"], spec.seed)
    balanced = rebalance_downsample(indexes["train"], spec.seed)
    stats = compute_norm_stats(balanced)
    write_manifest({"train": balanced, "val": val_idx, "test": test_idx},
                   out / "manifest.csv")
    write_stats(stats, out / "stats.json")
    counts = balanced.counts()
    print(f"train: {counts[Label.NORM]}/{counts[Label.PNEUMONIA]}")
    print(f"val: {len(val_idx)}")
    print(f"test: {len(test_idx)}")
    print(f"grayscale audit: {audit['single_channel']} single-channel, "
          f"{audit['color']} color (averaged to one channel)")
    print(f"intensity stats: mean {stats.mean:.6f}  std {stats.std:.6f}")
    print(f"wrote {out / 'manifest.csv'} and {out / 'stats.json'}")
    return 0


def _prepare_train_inputs(spec: RunSpec):
    manifest, stats = _read_prepared(spec)
    chosen = spec.transform_spec()
    val_set = EvalSet(manifest["val"], stats)
    test_set = EvalSet(manifest["test"], stats)
    return manifest, stats, chosen, val_set, test_set


def cmd_train(args) -> int:
    spec = _load_spec(args)
    strategy_cfg = spec.strategy_config()  # validates before any training
    train_cfg = spec.train_config()
    manifest, stats, chosen, val_set, test_set = _prepare_train_inputs(spec)
    out = _make_out_dir(spec)
    model = build_model(strategy_cfg, seed=spec.seed, weights_path=spec.weights_path)
    train_set = build_training_set(manifest["train"], chosen, stats, seed=spec.seed)
    history = fit(model, train_set, val_set, train_cfg, out_dir=out)
    if not history.records:
        log.warning("no epochs requested; nothing was trained")
        return 0
    best_model, _ = load_checkpoint(history.checkpoint)
    cm, m = evaluate_model(best_model, test_set, train_cfg.batch_size)
    write_metrics_json(out / "metrics.json", cm, m)
    print(f"best epoch {history.best_epoch}  val_acc {history.best_val_accuracy:.4f}")
    print(f"test accuracy {m.accuracy:.4f}  "
          f"pneumonia p/r/f1 {m.precision[1]:.4f}/{m.recall[1]:.4f}/{m.f1[1]:.4f}")
    return 0


def cmd_sweep(args) -> int:
    spec = _load_spec(args)
    base_cfg = spec.strategy_config()
    train_cfg = spec.train_config()
    manifest, stats, chosen, val_set, test_set = _prepare_train_inputs(spec)
    out = _make_out_dir(spec)

    def train_set_for(cell_seed: int):
        return build_training_set(manifest["train"], chosen, stats, seed=cell_seed)

    def model_factory(cfg, seed):
        return build_model(cfg, seed=seed, weights_path=spec.weights_path)

    results = sweep(base_cfg, train_cfg, spec.grid, train_set_for, val_set,
                    out_dir=out, model_factory=model_factory)
    rows = []
    for n, history in results.items():
        cell_dir = out / f"n{n}"
        best_model, _ = load_checkpoint(history.checkpoint)
        cm, m = evaluate_model(best_model, test_set, train_cfg.batch_size)
        write_metrics_json(cell_dir / "metrics.json", cm, m)
        rows.append((n, history.best_epoch, history.best_val_accuracy, m.accuracy))
    with open(out / "summary.csv", "w") as f:
        f.write("n_neurons,best_epoch,best_val_accuracy,test_accuracy\n")
        for n, epoch, val_acc, test_acc in sorted(rows):
            f.write(f"{n},{epoch},{val_acc:.4f},{test_acc:.4f}\n")
    best = select_best_run(results.values())
    with open(out / "best.json", "w") as f:
        json.dump({"n_neurons": best.n_neurons, "run_dir": f"n{best.n_neurons}",
                   "best_epoch": best.best_epoch,
                   "best_val_accuracy": best.best_val_accuracy}, f, indent=2)
        f.write("\n")
    _best_symlink(out, f"n{best.n_neurons}")
    print(f"best cell: n_neurons={best.n_neurons} "
          f"(val_acc {best.best_val_accuracy:.4f} at epoch {best.best_epoch})")
    return 0


def _best_symlink(out: Path, target: str) -> None:
    link = out / "best"
    try:
        if link.is_symlink() or link.exists():
            link.unlink()
        link.symlink_to(target)
    except OSError:  # filesystems without symlink support; best.json remains
        pass


def cmd_ablate(args) -> int:
    spec = _load_spec(args)
    train_cfg = spec.train_config()
    manifest, stats, _, val_set, test_set = _prepare_train_inputs(spec)
    out = _make_out_dir(spec)
    transforms = [TransformSpec(kind=k) for k in ("rotate", "hflip", "jitter", "crop_flip_rotate")]
    results = augmentation_ablation(manifest["train"], stats, transforms,
                                    val_set, test_set, train_cfg)
    ranking = ablation_ranking(results)
    with open(out / "ablation.csv", "w") as f:
        f.write("transform,test_accuracy\n")
        for kind, acc in ranking:
            f.write(f"{kind},{acc:.4f}\n")
    print("augmentation ranking (best first):")
    for kind, acc in ranking:
        print(f"  {kind}: {acc:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    spec = _load_spec(args)
    manifest, stats = _read_prepared(spec)
    model, meta = load_checkpoint(args.checkpoint)
    eval_set = EvalSet(manifest[args.split], stats)
    cm, m = evaluate_model(model, eval_set)
    print(f"split: {args.split}  samples: {cm.total}")
    print(f"confusion matrix [[{cm[0, 0]}, {cm[0, 1]}], [{cm[1, 0]}, {cm[1, 1]}]]")
    print(f"accuracy {m.accuracy:.4f}")
    for c, name in ((0, "norm"), (1, "pneumonia")):
        print(f"{name}: precision {m.precision[c]:.4f}  recall {m.recall[c]:.4f}  "
              f"f1 {m.f1[c]:.4f}")
    if spec.out_dir:
        out = _make_out_dir(spec)
        write_metrics_json(out / "metrics.json", cm, m)
    return 0


def cmd_report(args) -> int:
    spec = _load_spec(args)
    out = _make_out_dir(spec)
    rows, histories = [], []
    for run_dir in args.runs:
        run_dir = Path(run_dir)
        if not (run_dir / "meta.json").is_file():
            raise ConfigurationError(f"not a run directory (no meta.json): {run_dir}")
        histories.append(RunHistory.read(run_dir))
        if (run_dir / "metrics.json").is_file():
            rows.append(row_from_run_dir(run_dir))
    if rows:
        render_table(rows, out / "metrics.csv", out / "metrics.txt")
    render_curves(histories, out / "accuracy")
    print(f"report written to {out}")
    return 0


def cmd_preview(args) -> int:
    spec = _load_spec(args)
    out = _make_out_dir(spec)
    image = to_grayscale(load_image(args.image))
    path = write_preview_grid(image, out / "transforms.png", seed=spec.seed)
    print(f"wrote {path}")
    return 0


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "ablate-augmentation": cmd_ablate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "preview": cmd_preview,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        log.exception("command failed: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
