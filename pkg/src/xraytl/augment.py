"""Image transforms and assembly of the augmented training set.

Four label-preserving transforms are available, all ending in a resize to
224x224 (the backbone input size) and normalization with the training-set
intensity statistics:

  rotate            random rotation, angle uniform in [0, 20] degrees
  hflip             mirror around the vertical axis (deterministic)
  jitter            brightness/contrast/saturation factors in [1-j, 1+j]
  crop_flip_rotate  resize to 280, random 224 crop, coin-flip mirror,
                    then a small rotation uniform in [0, 5] degrees

The assembled training set contains every original plus one transformed
copy, doubling the sample count. Saturation is a no-op on single-channel
images (grayscale has no chroma); the field is kept so the factor draw
order stays fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from .errors import DegenerateStatsError
from .ingest import DatasetIndex, Label, NormStats, load_image, to_grayscale
from .seeding import subseed

TARGET_SIZE = 224
CROP_SOURCE_SIZE = 280

TRANSFORM_KINDS = ("none", "rotate", "hflip", "jitter", "crop_flip_rotate")
STOCHASTIC_KINDS = {"rotate", "jitter", "crop_flip_rotate"}
DEFAULT_TRANSFORM_KIND = "hflip"


@dataclass(frozen=True)
class TransformSpec:
    """A transform kind plus its draw bounds."""

    kind: str
    rotate_deg: float = 20.0
    jitter: float = 0.3
    crop_rotate_deg: float = 5.0

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not 0.0 <= self.rotate_deg <= 20.0:
            raise ValueError("rotation bound must lie in [0, 20] degrees")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter magnitude must lie in [0, 1)")
        if not 0.0 <= self.crop_rotate_deg <= 5.0:
            raise ValueError("post-crop rotation bound must lie in [0, 5] degrees")

    @property
    def stochastic(self) -> bool:
        return self.kind in STOCHASTIC_KINDS


NO_TRANSFORM = TransformSpec(kind="none")


@dataclass
class PreparedSample:
    """A normalized 224x224 single-channel image ready for training."""

    pixels: np.ndarray
    label: Label
    origin: tuple[str, TransformSpec] = field(default=("synthetic", NO_TRANSFORM))


def _as_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).unsqueeze(0)


def resize_image(image: np.ndarray, size: int = TARGET_SIZE) -> np.ndarray:
    """Bilinear resize (antialiased) to size x size."""
    out = TF.resize(
        _as_tensor(image), [size, size],
        interpolation=InterpolationMode.BILINEAR, antialias=True,
    )
    return out.squeeze(0).numpy()


def rotate_image(image: np.ndarray, angle_deg: float) -> np.ndarray:
    """Bilinear rotation about the center, corners filled with black."""
    out = TF.rotate(
        _as_tensor(image), float(angle_deg),
        interpolation=InterpolationMode.BILINEAR, fill=[0.0],
    )
    return out.squeeze(0).numpy()


def hflip_image(image: np.ndarray) -> np.ndarray:
    """Mirror around the vertical axis (columns reversed)."""
    return np.ascontiguousarray(image[:, ::-1])


def adjust_brightness(image: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(image * factor, 0.0, 1.0).astype(np.float32)


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    mean = float(image.mean())
    return np.clip(mean + factor * (image - mean), 0.0, 1.0).astype(np.float32)


def adjust_saturation(image: np.ndarray, factor: float) -> np.ndarray:
    # Grayscale carries no chroma; saturation cannot change it.
    return image


def normalize_image(image: np.ndarray, stats: NormStats) -> np.ndarray:
    """Standardize pixels: (x - mean) / std."""
    if stats.std <= 0.0:
        raise DegenerateStatsError(f"std must be positive, got {stats.std}")
    return ((image - stats.mean) / stats.std).astype(np.float32)


def draw_rotation_angle(rng, max_deg: float) -> float:
    return float(rng.uniform(0.0, max_deg))


def draw_jitter_factors(rng, j: float) -> tuple[float, float, float]:
    """Brightness, contrast, saturation factors, in application order."""
    b, c, s = (float(f) for f in rng.uniform(1.0 - j, 1.0 + j, 3))
    return b, c, s


def draw_crop_offsets(rng) -> tuple[int, int]:
    """(top, left) of the 224 crop within the 280 source, each in [0, 56]."""
    top, left = (int(v) for v in rng.integers(0, CROP_SOURCE_SIZE - TARGET_SIZE + 1, 2))
    return top, left


def draw_flip(rng) -> bool:
    return bool(rng.random() < 0.5)


def apply_transform(
    image: np.ndarray, spec: TransformSpec, stats: NormStats, rng=None
) -> np.ndarray:
    """Run one transform pipeline end to end; output is 224x224 normalized.

    Random draws come from rng in a fixed order per kind, so a seeded
    generator makes the output bitwise reproducible.
    """
    if spec.kind == "none":
        out = resize_image(image)
    elif spec.kind == "rotate":
        out = resize_image(rotate_image(image, draw_rotation_angle(rng, spec.rotate_deg)))
    elif spec.kind == "hflip":
        out = resize_image(hflip_image(image))
    elif spec.kind == "jitter":
        b, c, s = draw_jitter_factors(rng, spec.jitter)
        out = adjust_saturation(adjust_contrast(adjust_brightness(image, b), c), s)
        out = resize_image(out)
    elif spec.kind == "crop_flip_rotate":
        big = resize_image(image, CROP_SOURCE_SIZE)
        top, left = draw_crop_offsets(rng)
        out = big[top:top + TARGET_SIZE, left:left + TARGET_SIZE]
        if draw_flip(rng):
            out = hflip_image(out)
        out = rotate_image(out, draw_rotation_angle(rng, spec.crop_rotate_deg))
    else:  # pragma: no cover - guarded by TransformSpec
        raise ValueError(spec.kind)
    return normalize_image(out, stats)


class TrainingSet:
    """Originals plus one transformed copy each, materialized lazily.

    Index i < n yields original record i (resize + normalize only);
    index n + j yields the transformed copy of record j. Each transformed
    sample draws from its own sub-seed, so materialization order is
    irrelevant and samples can be produced in parallel.
    """

    def __init__(
        self,
        index: DatasetIndex,
        chosen: TransformSpec,
        stats: NormStats,
        seed: int = 0,
        epoch: int = 0,
        loader=load_image,
    ):
        self.index = index
        self.chosen = chosen
        self.stats = stats
        self.seed = seed
        self.epoch = epoch
        self.loader = loader

    def __len__(self) -> int:
        return 2 * len(self.index)

    def __getitem__(self, i: int) -> PreparedSample:
        n = len(self.index)
        if not 0 <= i < 2 * n:
            raise IndexError(i)
        record = self.index.records[i % n]
        image = to_grayscale(self.loader(record.path))
        if i < n:
            pixels = apply_transform(image, NO_TRANSFORM, self.stats)
            return PreparedSample(pixels, record.label, (str(record.path), NO_TRANSFORM))
        rng = np.random.default_rng(subseed(self.seed, f"augment:{self.epoch}:{i - n}"))
        pixels = apply_transform(image, self.chosen, self.stats, rng)
        return PreparedSample(pixels, record.label, (str(record.path), self.chosen))

    def for_epoch(self, epoch: int) -> "TrainingSet":
        """Resample the stochastic transforms each epoch; deterministic kinds reuse epoch 0."""
        if not self.chosen.stochastic or epoch == self.epoch:
            return self
        return TrainingSet(self.index, self.chosen, self.stats, self.seed, epoch, self.loader)


def build_training_set(
    index: DatasetIndex,
    chosen: TransformSpec,
    stats: NormStats,
    seed: int = 0,
    loader=load_image,
) -> TrainingSet:
    """Assemble the doubled training set: originals plus transformed copies."""
    return TrainingSet(index, chosen, stats, seed=seed, loader=loader)


class EvalSet:
    """Resize+normalize view of one split, no augmentation; lazily materialized."""

    def __init__(self, index: DatasetIndex, stats: NormStats, loader=load_image):
        self.index = index
        self.stats = stats
        self.loader = loader

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i: int) -> PreparedSample:
        record = self.index.records[i]
        image = to_grayscale(self.loader(record.path))
        pixels = apply_transform(image, NO_TRANSFORM, self.stats)
        return PreparedSample(pixels, record.label, (str(record.path), NO_TRANSFORM))


def write_preview_grid(image: np.ndarray, out_path: Path | str, seed: int = 0) -> Path:
    """Render a 2x2 grid of the four transforms applied to one image."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    display_stats = NormStats(mean=0.0, std=1.0)  # keep pixels viewable
    fig, axes = plt.subplots(2, 2, figsize=(8, 8))
    for ax, kind in zip(axes.flat, ("rotate", "hflip", "jitter", "crop_flip_rotate")):
        rng = np.random.default_rng(subseed(seed, f"preview:{kind}"))
        ax.imshow(
            apply_transform(image, TransformSpec(kind=kind), display_stats, rng),
            cmap="gray", vmin=0.0, vmax=1.0,
        )
        ax.set_title(kind)
        ax.axis("off")
    out_path = Path(out_path)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
