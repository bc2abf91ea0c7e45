"""Dataset discovery, grayscale conversion, eval repartitioning, class
balancing, and normalization statistics.

Expected on-disk layout (the public Kaggle chest X-ray arrangement):

    <root>/{train,val,test}/{NORMAL,PNEUMONIA}/*.{jpeg,jpg,png}

All intensities are scaled to [0, 1] by dividing 8-bit values by 255 before
any statistics or transforms are applied.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigurationError, UnsupportedImageError
from .seeding import subseed

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
CLASS_DIRS = {"NORMAL": 0, "PNEUMONIA": 1}
IMAGE_EXTENSIONS = {".jpeg", ".jpg", ".png"}


class Label(IntEnum):
    NORM = 0
    PNEUMONIA = 1


@dataclass(frozen=True)
class ImageRecord:
    """One image on disk: where it lives, its class, and its split."""

    path: Path
    label: Label
    split: str
    provenance: str = ""


@dataclass
class DatasetIndex:
    """Ordered collection of records for one split."""

    records: list[ImageRecord]

    def __post_init__(self):
        paths = [r.path for r in self.records]
        if len(set(paths)) != len(paths):
            raise ValueError("duplicate paths within one index")

    def __len__(self) -> int:
        return len(self.records)

    def counts(self) -> dict[Label, int]:
        out = {Label.NORM: 0, Label.PNEUMONIA: 0}
        for r in self.records:
            out[r.label] += 1
        return out


@dataclass(frozen=True)
class NormStats:
    """Pixel intensity mean/std of the training split, on the [0, 1] scale."""

    mean: float
    std: float


def load_image(path: Path | str) -> np.ndarray:
    """Decode an image file to float32 in [0, 1], shape HxW or HxWx3."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    return arr.astype(np.float32) / 255.0


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Collapse channels by unweighted averaging; single-channel passes through."""
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 1:
        return image[:, :, 0]
    if image.ndim == 3 and image.shape[2] == 3:
        return image.mean(axis=2, dtype=np.float32)
    raise UnsupportedImageError(f"expected 1 or 3 channels, got shape {image.shape}")


def _decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (UnidentifiedImageError, OSError):
        return False


def scan_dataset(root: Path | str) -> dict[str, DatasetIndex]:
    """Index every decodable image under root, labeled by its class directory.

    Missing split directories are fatal; undecodable files are logged and
    skipped. Records are ordered by path so later seeded shuffles are
    reproducible regardless of filesystem enumeration order.
    """
    root = Path(root)
    indexes: dict[str, DatasetIndex] = {}
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            raise ConfigurationError(f"missing split directory: {split_dir}")
        records = []
        for class_name, label_value in CLASS_DIRS.items():
            class_dir = split_dir / class_name
            if not class_dir.is_dir():
                continue
            for path in sorted(class_dir.iterdir()):
                if path.suffix.lower() not in IMAGE_EXTENSIONS:
                    continue
                if not _decodable(path):
                    log.warning("skipping undecodable file: %s", path)
                    continue
                records.append(
                    ImageRecord(path=path, label=Label(label_value), split=split, provenance=split)
                )
        records.sort(key=lambda r: r.path)
        indexes[split] = DatasetIndex(records)
    return indexes


def repartition_eval(
    test_index: DatasetIndex, val_index: DatasetIndex, seed: int
) -> tuple[DatasetIndex, DatasetIndex]:
    """Pool the test and val records and split them evenly in half.

    The shuffle is driven only by the seed. An odd combined size puts the
    extra record in val (val drives model selection) with a warning.
    """
    if not test_index.records or not val_index.records:
        raise ValueError("repartition requires non-empty test and val indexes")
    pool = sorted(test_index.records + val_index.records, key=lambda r: r.path)
    rng = np.random.default_rng(subseed(seed, "repartition"))
    order = rng.permutation(len(pool))
    n_val = (len(pool) + 1) // 2
    if len(pool) % 2:
        log.warning("odd combined eval size %d; extra record assigned to val", len(pool))
    val_records = [
        dataclasses.replace(pool[i], split="val", provenance=pool[i].split)
        for i in order[:n_val]
    ]
    test_records = [
        dataclasses.replace(pool[i], split="test", provenance=pool[i].split)
        for i in order[n_val:]
    ]
    return DatasetIndex(val_records), DatasetIndex(test_records)


def rebalance_downsample(index: DatasetIndex, seed: int) -> DatasetIndex:
    """Discard random majority-class records until class counts are equal.

    Survivors are drawn without replacement by a seeded generator over the
    path-sorted records, so the survivor set is independent of input order;
    the output preserves the input's record order.
    """
    counts = index.counts()
    if any(n == 0 for n in counts.values()):
        raise ValueError(f"cannot rebalance with an empty class: {counts}")
    target = min(counts.values())
    rng = np.random.default_rng(subseed(seed, "downsample"))
    keep: set[Path] = set()
    by_path = sorted(index.records, key=lambda r: r.path)
    for label in (Label.NORM, Label.PNEUMONIA):
        members = [r for r in by_path if r.label == label]
        if len(members) > target:
            chosen = rng.choice(len(members), size=target, replace=False)
            keep.update(members[i].path for i in chosen)
        else:
            keep.update(r.path for r in members)
    return DatasetIndex([r for r in index.records if r.path in keep])


def compute_norm_stats(index: DatasetIndex, loader=load_image) -> NormStats:
    """Population mean/std over all pixels of all images in the index.

    Accumulates per-image (n, sum, sum of squares) in float64, so the result
    is independent of iteration order up to float rounding.
    """
    if not index.records:
        raise ValueError("cannot compute stats on an empty index")
    n = 0
    total = 0.0
    total_sq = 0.0
    for record in index.records:
        pixels = to_grayscale(loader(record.path)).astype(np.float64)
        n += pixels.size
        total += float(pixels.sum())
        total_sq += float((pixels * pixels).sum())
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return NormStats(mean=mean, std=float(np.sqrt(var)))


def grayscale_audit(index: DatasetIndex) -> dict[str, int]:
    """Count single-channel vs color files by reading headers only."""
    audit = {"single_channel": 0, "color": 0}
    for record in index.records:
        with Image.open(record.path) as im:
            audit["single_channel" if im.mode == "L" else "color"] += 1
    return audit


def write_manifest(indexes: dict[str, DatasetIndex], path: Path | str) -> None:
    """One CSV record per image: path, label, split, provenance."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "label", "split", "provenance"])
        for split in SPLITS:
            for r in indexes[split].records:
                writer.writerow([str(r.path), r.label.name.lower(), r.split, r.provenance])


def read_manifest(path: Path | str) -> dict[str, DatasetIndex]:
    by_split: dict[str, list[ImageRecord]] = {s: [] for s in SPLITS}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            record = ImageRecord(
                path=Path(row["path"]),
                label=Label[row["label"].upper()],
                split=row["split"],
                provenance=row["provenance"],
            )
            by_split[record.split].append(record)
    return {split: DatasetIndex(records) for split, records in by_split.items()}


def write_stats(stats: NormStats, path: Path | str) -> None:
    with open(path, "w") as f:
        json.dump({"mean": stats.mean, "std": stats.std}, f, indent=2)
        f.write("\n")


def read_stats(path: Path | str) -> NormStats:
    with open(path) as f:
        data = json.load(f)
    return NormStats(mean=data["mean"], std=data["std"])
