"""Accuracy-curve plots and the per-model metrics table.

Tables come in two renderings with identical values: a CSV for machines and
an aligned text table for people. Values are reported at 4 decimal places.
Plots are written as both PNG (raster) and SVG (vector).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import ClassMetrics, ConfusionMatrix
from .trainer import RunHistory

EXPERIMENT_ORDER = ["frozen", "single_channel", "full", "scratch"]

TABLE_COLUMNS = [
    "experiment", "backbone", "n_neurons", "accuracy",
    "precision_norm", "recall_norm", "f1_norm",
    "precision_pneumonia", "recall_pneumonia", "f1_pneumonia",
]


@dataclass
class MetricsRow:
    experiment: str
    backbone: str
    n_neurons: int | None
    accuracy: float
    precision: tuple[float, float]
    recall: tuple[float, float]
    f1: tuple[float, float]

    def cells(self) -> list[str]:
        return [
            self.experiment,
            self.backbone,
            "" if self.n_neurons is None else str(self.n_neurons),
            f"{self.accuracy:.4f}",
            f"{self.precision[0]:.4f}", f"{self.recall[0]:.4f}", f"{self.f1[0]:.4f}",
            f"{self.precision[1]:.4f}", f"{self.recall[1]:.4f}", f"{self.f1[1]:.4f}",
        ]


def write_metrics_json(path: Path | str, cm: ConfusionMatrix, metrics: ClassMetrics) -> None:
    with open(path, "w") as f:
        json.dump(
            {
                "confusion_matrix": [list(row) for row in cm.counts],
                "accuracy": metrics.accuracy,
                "precision": list(metrics.precision),
                "recall": list(metrics.recall),
                "f1": list(metrics.f1),
                "degenerate": list(metrics.degenerate),
            },
            f, indent=2,
        )
        f.write("\n")


def read_metrics_json(path: Path | str) -> dict:
    with open(path) as f:
        return json.load(f)


def _order_key(row: MetricsRow):
    try:
        exp = EXPERIMENT_ORDER.index(row.experiment)
    except ValueError:
        exp = len(EXPERIMENT_ORDER)
    return (exp, row.backbone, row.n_neurons if row.n_neurons is not None else -1)


def render_table(rows: list[MetricsRow], out_csv: Path | str, out_txt: Path | str) -> None:
    """Write the metrics table as CSV and as an aligned text rendering."""
    if not rows:
        raise ValueError("no metrics rows to render")
    ordered = sorted(rows, key=_order_key)
    with open(out_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TABLE_COLUMNS)
        for row in ordered:
            writer.writerow(row.cells())
    grid = [TABLE_COLUMNS] + [row.cells() for row in ordered]
    widths = [max(len(line[i]) for line in grid) for i in range(len(TABLE_COLUMNS))]
    with open(out_txt, "w") as f:
        for line_no, line in enumerate(grid):
            f.write("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() + "\n")
            if line_no == 0:
                f.write("  ".join("-" * w for w in widths) + "\n")


def curve_figure(histories: list[RunHistory], attr: str, title: str):
    """One accuracy-vs-epoch figure with a labeled curve per run."""
    histories = [h for h in histories if h.records]
    if not histories:
        raise ValueError("no non-empty histories to plot")
    fig, ax = plt.subplots(figsize=(8, 5))
    for h in histories:
        label = h.strategy or "run"
        if h.n_neurons:
            label += f" n={h.n_neurons}"
        epochs = [r.epoch for r in h.records]
        values = [getattr(r, attr) for r in h.records]
        ax.plot(epochs, values, marker="o", markersize=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig


def render_curves(histories: list[RunHistory], out_base: Path | str) -> list[Path]:
    """Train and validation accuracy vs epoch, one curve per run, PNG and SVG."""
    out_base = Path(out_base)
    written = []
    for attr, title, suffix in (("train_accuracy", "training accuracy", "train"),
                                ("val_accuracy", "validation accuracy", "val")):
        fig = curve_figure(histories, attr, title)
        for ext in ("png", "svg"):
            path = out_base.parent / f"{out_base.name}_{suffix}.{ext}"
            fig.savefig(path, dpi=120)
            written.append(path)
        plt.close(fig)
    return written


def row_from_run_dir(run_dir: Path | str) -> MetricsRow:
    """Assemble a table row from a run directory's meta.json + metrics.json."""
    run_dir = Path(run_dir)
    history = RunHistory.read(run_dir)
    data = read_metrics_json(run_dir / "metrics.json")
    with open(run_dir / "meta.json") as f:
        meta = json.load(f)
    experiment = meta.get("strategy", "")
    if experiment == "full" and not _run_was_pretrained(run_dir):
        experiment = "scratch"
    return MetricsRow(
        experiment=experiment,
        backbone=history.backbone,
        n_neurons=history.n_neurons if experiment in ("frozen", "single_channel") else None,
        accuracy=data["accuracy"],
        precision=tuple(data["precision"]),
        recall=tuple(data["recall"]),
        f1=tuple(data["f1"]),
    )


def _run_was_pretrained(run_dir: Path) -> bool:
    snapshot = run_dir / "config.yaml"
    if snapshot.exists():
        import yaml

        with open(snapshot) as f:
            return bool((yaml.safe_load(f) or {}).get("pretrained", True))
    return True
