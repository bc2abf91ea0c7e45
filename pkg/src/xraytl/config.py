"""Run specification: one declarative record from which a run is fully
reconstructible.

A RunSpec is read from a YAML config file, overridden by CLI flags, and the
merged result (every field explicit, defaults included) is snapshotted into
the run directory so each run is auditable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import DEFAULT_TRANSFORM_KIND, TransformSpec
from .backbone import BackboneKind, Strategy, StrategyConfig
from .errors import ConfigurationError
from .trainer import TrainConfig


@dataclass
class RunSpec:
    # data locations
    data_root: str | None = None
    prepared_dir: str | None = None  # directory holding manifest.csv / stats.json
    out_dir: str | None = None
    weights_path: str | None = None
    # reproducibility
    seed: int = 0
    # model
    backbone: str = "resnet18"
    strategy: str = "frozen"
    pretrained: bool = True
    n_neurons: int = 100
    first_conv_init: str = "sum"
    input_channels: int | None = None  # derived from strategy unless overridden
    # augmentation
    transform: str = DEFAULT_TRANSFORM_KIND
    rotate_deg: float = 20.0
    jitter: float = 0.3
    crop_rotate_deg: float = 5.0
    # optimization
    batch_size: int = 30
    epochs: int = 15
    base_lr: float = 1e-3
    lr_decay: float = 0.1
    lr_step: int = 5
    optimizer: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 0.0
    # sweep
    grid: list[int] = field(default_factory=lambda: [10, 100, 500])

    @classmethod
    def from_yaml(cls, path: Path | str) -> "RunSpec":
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_yaml(self, path: Path | str) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(dataclasses.asdict(self), f, sort_keys=False)

    def with_overrides(self, **overrides) -> "RunSpec":
        """Replace fields whose override value is not None."""
        updates = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **updates)

    def strategy_config(self) -> StrategyConfig:
        try:
            cfg = StrategyConfig(
                backbone=BackboneKind(self.backbone),
                strategy=Strategy(self.strategy),
                pretrained=self.pretrained,
                n_neurons=self.n_neurons,
                first_conv_init=self.first_conv_init,
            )
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        if self.input_channels is not None and self.input_channels != cfg.input_channels:
            raise ConfigurationError(
                f"strategy {cfg.strategy.value} requires {cfg.input_channels} input "
                f"channel(s); config asks for {self.input_channels}"
            )
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            base_lr=self.base_lr,
            lr_decay=self.lr_decay,
            lr_step=self.lr_step,
            seed=self.seed,
            optimizer=self.optimizer,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
        )

    def transform_spec(self) -> TransformSpec:
        try:
            return TransformSpec(
                kind=self.transform,
                rotate_deg=self.rotate_deg,
                jitter=self.jitter,
                crop_rotate_deg=self.crop_rotate_deg,
            )
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc

    def experiment_name(self) -> str:
        """Display name for report rows; from-scratch full training is its own row."""
        if self.strategy == "full" and not self.pretrained:
            return "scratch"
        return self.strategy
