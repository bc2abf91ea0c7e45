"""Confusion matrix, per-class precision/recall/F1, and best-run selection.

Class order is fixed: 0 = norm, 1 = pneumonia. For a 2x2 count matrix C
indexed (true, predicted):

    precision_c = C[c,c] / sum_t C[t,c]     (0 when the column is empty)
    recall_c    = C[c,c] / sum_p C[c,p]     (0 when the row is empty)
    f1_c        = 2 p r / (p + r)           (0 when p + r = 0)
    accuracy    = (C[0,0] + C[1,1]) / total

Empty denominators produce 0 together with a degenerate flag so tables
stay machine-readable (no NaN).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigurationError
from .backbone import AdaptedModel, replicate_channels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """2x2 integer counts indexed (true label, predicted label)."""

    counts: tuple[tuple[int, int], tuple[int, int]]

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def __getitem__(self, key: tuple[int, int]) -> int:
        t, p = key
        return self.counts[t][p]


@dataclass(frozen=True)
class ClassMetrics:
    """Per-class precision/recall/f1 plus overall accuracy."""

    precision: tuple[float, float]
    recall: tuple[float, float]
    f1: tuple[float, float]
    accuracy: float
    degenerate: tuple[bool, bool] = (False, False)


def confusion_matrix(preds: Sequence[int], truth: Sequence[int]) -> ConfusionMatrix:
    """Count (truth, prediction) pairs; labels must be 0 or 1."""
    if len(preds) != len(truth):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(truth)} labels")
    counts = [[0, 0], [0, 0]]
    for p, t in zip(preds, truth):
        counts[int(t)][int(p)] += 1
    return ConfusionMatrix((tuple(counts[0]), tuple(counts[1])))


def per_class_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    """Derive precision/recall/f1 per class and overall accuracy from counts."""
    if cm.total == 0:
        raise ValueError("cannot compute metrics on an empty confusion matrix")
    precision, recall, f1, degenerate = [], [], [], []
    for c in (0, 1):
        col = cm[0, c] + cm[1, c]
        row = cm[c, 0] + cm[c, 1]
        bad = col == 0 or row == 0
        p = cm[c, c] / col if col else 0.0
        r = cm[c, c] / row if row else 0.0
        f = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(f)
        degenerate.append(bad)
    return ClassMetrics(
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        accuracy=(cm[0, 0] + cm[1, 1]) / cm.total,
        degenerate=tuple(degenerate),
    )


def batch_tensor(samples, input_channels: int) -> torch.Tensor:
    """Stack prepared samples into a model input batch, replicating channels if needed."""
    batch = torch.from_numpy(np.stack([s.pixels for s in samples])).unsqueeze(1)
    if input_channels == 3:
        batch = replicate_channels(batch)
    return batch


def input_channels_of(model) -> int:
    """Channel count the model expects; single-channel unless declared otherwise."""
    cfg = getattr(model, "cfg", None)
    if cfg is not None:
        return cfg.input_channels
    if isinstance(model, AdaptedModel):
        raise ConfigurationError("model has no strategy applied; cannot infer input channels")
    return int(getattr(model, "input_channels", 1))


def predict(model, samples, batch_size: int = 30) -> list[int]:
    """Argmax predictions in inference mode; exactly tied logits resolve to 0."""
    channels = input_channels_of(model)
    preds: list[int] = []
    ties = 0
    model.eval()
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = [samples[i] for i in range(start, min(start + batch_size, len(samples)))]
            logits = model(batch_tensor(chunk, channels))
            ties += int((logits[:, 0] == logits[:, 1]).sum())
            preds.extend(int(v) for v in logits.argmax(dim=1))
    if ties:
        log.info("%d exactly tied logit pairs resolved to class 0", ties)
    return preds


def evaluate_model(model, eval_set, batch_size: int = 30
                   ) -> tuple[ConfusionMatrix, ClassMetrics]:
    """Full evaluation of a model over one prepared split."""
    preds = predict(model, eval_set, batch_size=batch_size)
    truth = [int(eval_set[i].label) for i in range(len(eval_set))]
    cm = confusion_matrix(preds, truth)
    return cm, per_class_metrics(cm)


def select_best_run(histories):
    """Highest best-epoch validation accuracy; ties prefer fewer head neurons."""
    runs = list(histories)
    if not runs:
        raise ValueError("no runs to select from")
    return min(runs, key=lambda h: (-h.best_val_accuracy, h.n_neurons, h.best_epoch))
