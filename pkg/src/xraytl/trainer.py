"""Mini-batch training with step-decay scheduling, checkpointing, the head
width sweep, and the augmentation ablation.

Defaults follow the experiment setup: batches of 30 samples, cross-entropy
loss, learning rate divided by 10 every 5 epochs. Optimizer choice and base
learning rate are exposed in the config because they materially affect the
curves; the defaults (adam, 1e-3) are a robust head-training setup.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import TransformSpec, build_training_set
from .backbone import AdaptedModel, StrategyConfig, Strategy, build_model, save_checkpoint
from .errors import ConfigurationError
from .ingest import DatasetIndex, NormStats, load_image
from .metrics import batch_tensor, input_channels_of, predict
from .seeding import subseed


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 30
    epochs: int = 15
    base_lr: float = 1e-3
    lr_decay: float = 0.1
    lr_step: int = 5
    seed: int = 0
    optimizer: str = "adam"  # or "sgd" (momentum 0.9)
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.lr_step < 1:
            raise ConfigurationError("lr_step must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigurationError("lr_decay must lie in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: base_lr * lr_decay ** floor(epoch / lr_step)."""
    return cfg.base_lr * cfg.lr_decay ** (epoch // cfg.lr_step)


def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    """Gradient steps per epoch; the final partial batch is kept."""
    return math.ceil(n_samples / batch_size)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_accuracy: float
    val_accuracy: float
    mean_train_loss: float
    lr: float


@dataclass
class RunHistory:
    """Per-epoch accuracy/loss plus the best-validation checkpoint reference."""

    records: list[EpochRecord]
    best_epoch: int | None = None
    best_val_accuracy: float | None = None
    checkpoint: str | None = None
    backbone: str = ""
    strategy: str = ""
    n_neurons: int = 0
    seed: int = 0

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "history.jsonl", "w") as f:
            for r in self.records:
                f.write(json.dumps(dataclasses.asdict(r)) + "\n")
        with open(out_dir / "meta.json", "w") as f:
            meta = {k: v for k, v in dataclasses.asdict(self).items() if k != "records"}
            json.dump(meta, f, indent=2)
            f.write("\n")

    @classmethod
    def read(cls, run_dir: Path) -> "RunHistory":
        run_dir = Path(run_dir)
        with open(run_dir / "meta.json") as f:
            meta = json.load(f)
        records = []
        with open(run_dir / "history.jsonl") as f:
            for line in f:
                records.append(EpochRecord(**json.loads(line)))
        return cls(records=records, **meta)


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ConfigurationError("model has no trainable parameters")
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(params, lr=cfg.base_lr, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


def train_epoch(model: nn.Module, optimizer: torch.optim.Optimizer, samples,
                cfg: TrainConfig, rng) -> tuple[float, float, int]:
    """One pass over the training set: seeded shuffle, one step per batch.

    Returns (mean loss, train accuracy, gradient steps). Train accuracy is
    accumulated from the training-mode forward passes themselves.
    """
    if len(samples) == 0:
        raise ValueError("training set is empty")
    channels = input_channels_of(model)
    order = rng.permutation(len(samples))
    model.train()
    loss_sum = 0.0
    correct = 0
    steps = 0
    for start in range(0, len(order), cfg.batch_size):
        batch_ids = order[start:start + cfg.batch_size]
        batch = [samples[int(i)] for i in batch_ids]
        inputs = batch_tensor(batch, channels)
        labels = torch.tensor([int(s.label) for s in batch], dtype=torch.long)
        logits = model(inputs)
        loss = F.cross_entropy(logits, labels)
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"non-finite loss at batch {steps} (lr={optimizer.param_groups[0]['lr']:g})"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        loss_sum += float(loss.detach()) * len(batch)
        correct += int((logits.detach().argmax(dim=1) == labels).sum())
        steps += 1
    n = len(samples)
    return loss_sum / n, correct / n, steps


def evaluate_accuracy(model: nn.Module, samples, batch_size: int = 30) -> float:
    if len(samples) == 0:
        raise ValueError("evaluation set is empty")
    preds = predict(model, samples, batch_size=batch_size)
    truth = [int(samples[i].label) for i in range(len(samples))]
    return sum(p == t for p, t in zip(preds, truth)) / len(truth)


def fit(model: nn.Module, train_set, val_set, cfg: TrainConfig,
        out_dir: Path | str | None = None, progress=print) -> RunHistory:
    """Train for cfg.epochs, tracking per-epoch accuracy and the best model.

    A checkpoint is written whenever validation accuracy strictly improves
    (ties keep the earlier epoch); the final state is saved separately for
    resumption. With a fixed seed the history is bitwise reproducible.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    scfg = getattr(model, "cfg", None)
    history = RunHistory(
        records=[],
        backbone=scfg.backbone.value if scfg else "",
        strategy=scfg.strategy.value if scfg else "",
        n_neurons=scfg.n_neurons if scfg else 0,
        seed=cfg.seed,
    )
    torch.manual_seed(subseed(cfg.seed, "fit"))  # dropout draws
    optimizer = make_optimizer(model, cfg)
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        samples = train_set.for_epoch(epoch) if hasattr(train_set, "for_epoch") else train_set
        rng = np.random.default_rng(subseed(cfg.seed, f"shuffle:{epoch}"))
        mean_loss, train_acc, _ = train_epoch(model, optimizer, samples, cfg, rng)
        val_acc = evaluate_accuracy(model, val_set, cfg.batch_size)
        history.records.append(EpochRecord(epoch, train_acc, val_acc, mean_loss, lr))
        if progress is not None:
            progress(f"epoch {epoch:3d}  lr {lr:.2e}  loss {mean_loss:.4f}  "
                     f"train_acc {train_acc:.4f}  val_acc {val_acc:.4f}")
        if history.best_val_accuracy is None or val_acc > history.best_val_accuracy:
            history.best_epoch = epoch
            history.best_val_accuracy = val_acc
            if out_dir is not None and isinstance(model, AdaptedModel):
                path = out_dir / "best.pt"
                save_checkpoint(model, path, epoch, val_acc)
                history.checkpoint = str(path)
    if out_dir is not None:
        if isinstance(model, AdaptedModel) and history.records:
            save_checkpoint(model, out_dir / "last.pt",
                            history.records[-1].epoch, history.records[-1].val_accuracy)
        history.write(out_dir)
    return history


def sweep(base_cfg: StrategyConfig, train_cfg: TrainConfig, grid: list[int],
          train_set_for, val_set, out_dir: Path | str | None = None,
          model_factory=build_model, progress=print) -> dict[int, RunHistory]:
    """One fit per head width; cell seeds derive deterministically from the run seed.

    `train_set_for(seed)` supplies the training set so stochastic
    augmentation can re-key to the cell seed; passing a plain sequence is
    also accepted.
    """
    if not grid:
        raise ConfigurationError("sweep grid is empty")
    if base_cfg.strategy is Strategy.FULL:
        raise ConfigurationError("the head-width sweep applies to frozen-backbone strategies only")
    results: dict[int, RunHistory] = {}
    for n in grid:
        cell_seed = subseed(train_cfg.seed, f"sweep:{n}")
        cell_cfg = dataclasses.replace(base_cfg, n_neurons=n)
        cell_train = dataclasses.replace(train_cfg, seed=cell_seed)
        model = model_factory(cell_cfg, seed=cell_seed)
        train_set = train_set_for(cell_seed) if callable(train_set_for) else train_set_for
        cell_dir = Path(out_dir) / f"n{n}" if out_dir is not None else None
        if progress is not None:
            progress(f"--- sweep cell n_neurons={n} ---")
        results[n] = fit(model, train_set, val_set, cell_train, cell_dir, progress)
    return results


class SmallConvNet(nn.Module):
    """Compact convolutional classifier used as the augmentation-ranking reference.

    Three conv/ReLU/downsample blocks (16/32/64 channels), global average
    pooling, and a 2-way output. Small enough to train quickly on CPU while
    still separating the augmentation variants.
    """

    input_channels = 1

    def __init__(self, seed: int = 0):
        super().__init__()
        torch.manual_seed(subseed(seed, "smallconv"))
        layers: list[nn.Module] = []
        width_in = 1
        for width in (16, 32, 64):
            layers += [nn.Conv2d(width_in, width, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
            width_in = width
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.classify = nn.Linear(64, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classify(self.pool(self.features(x)).flatten(1))


def augmentation_ablation(index: DatasetIndex, stats: NormStats,
                          transforms: list[TransformSpec], val_set, test_set,
                          train_cfg: TrainConfig, loader=load_image,
                          model_factory=None, progress=print) -> dict[str, float]:
    """Train the reference net on originals+transform for each transform.

    Returns test accuracy keyed by transform kind; every cell derives its
    own seed from the run seed, so the table is reproducible.
    """
    results: dict[str, float] = {}
    for spec in transforms:
        cell_seed = subseed(train_cfg.seed, f"ablate:{spec.kind}")
        train_set = build_training_set(index, spec, stats, seed=cell_seed, loader=loader)
        model = (model_factory or (lambda seed: SmallConvNet(seed=seed)))(cell_seed)
        cell_cfg = dataclasses.replace(train_cfg, seed=cell_seed)
        if progress is not None:
            progress(f"--- ablation cell transform={spec.kind} ---")
        fit(model, train_set, val_set, cell_cfg, out_dir=None, progress=progress)
        results[spec.kind] = evaluate_accuracy(model, test_set, train_cfg.batch_size)
    return results


def ablation_ranking(results: dict[str, float]) -> list[tuple[str, float]]:
    """Transforms ordered best-first by test accuracy (name breaks ties)."""
    return sorted(results.items(), key=lambda kv: (-kv[1], kv[0]))
