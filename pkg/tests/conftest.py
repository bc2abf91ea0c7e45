from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from xraytl.ingest import DatasetIndex, ImageRecord, Label


def save_gray(path: Path, pixels: np.ndarray) -> None:
    """Write a uint8 grayscale image."""
    Image.fromarray(pixels.astype(np.uint8), mode="L").save(path)


def save_rgb(path: Path, pixels: np.ndarray) -> None:
    Image.fromarray(pixels.astype(np.uint8), mode="RGB").save(path)


def make_tree(root: Path, counts: dict[str, tuple[int, int]], size=(32, 32),
              seed: int = 0, color_every: int = 0) -> Path:
    """Build a Kaggle-style directory tree of small synthetic X-ray stand-ins.

    counts maps split -> (n_norm, n_pneumonia). Norm images are dark,
    pneumonia images bright, so tiny training runs can actually separate
    them. Every `color_every`-th image is written as RGB when requested.
    """
    rng = np.random.default_rng(seed)
    written = 0
    for split, (n_norm, n_pneu) in counts.items():
        for class_name, n, base in (("NORMAL", n_norm, 60), ("PNEUMONIA", n_pneu, 190)):
            class_dir = root / split / class_name
            class_dir.mkdir(parents=True, exist_ok=True)
            for i in range(n):
                pixels = np.clip(base + rng.normal(0, 25, size), 0, 255)
                path = class_dir / f"img_{i:03d}.png"
                written += 1
                if color_every and written % color_every == 0:
                    save_rgb(path, np.stack([pixels] * 3, axis=-1))
                else:
                    save_gray(path, pixels)
    return root


def fake_index(n_norm: int, n_pneumonia: int, split: str = "train") -> DatasetIndex:
    """In-memory index with synthetic paths; no files behind it."""
    records = [
        ImageRecord(Path(f"/fake/{split}/NORMAL/n_{i:05d}.png"), Label.NORM, split, split)
        for i in range(n_norm)
    ] + [
        ImageRecord(Path(f"/fake/{split}/PNEUMONIA/p_{i:05d}.png"), Label.PNEUMONIA, split, split)
        for i in range(n_pneumonia)
    ]
    return DatasetIndex(records)


def array_loader(images: dict) -> callable:
    """Loader for in-memory indexes: path -> stored array."""
    return lambda path: images[Path(path)]


class ForcedRng:
    """Stand-in rng returning scripted draws, for identity-case tests."""

    def __init__(self, uniform_value=0.0, integers_value=0, random_value=1.0):
        self.uniform_value = uniform_value
        self.integers_value = integers_value
        self.random_value = random_value

    def uniform(self, low, high, size=None):
        if size is None:
            return self.uniform_value
        return np.full(size, self.uniform_value)

    def integers(self, low, high, size=None):
        if size is None:
            return self.integers_value
        return np.full(size, self.integers_value, dtype=np.int64)

    def random(self):
        return self.random_value


@pytest.fixture
def tiny_tree(tmp_path):
    """Small but complete dataset tree: 6/4 train, 2/2 val, 2/2 test."""
    return make_tree(
        tmp_path / "data",
        {"train": (6, 4), "val": (2, 2), "test": (2, 2)},
        color_every=5,
    )
