"""Synthetic circle-on-noise samples for hermetic training runs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import DatasetSplits, InMemoryDataset, Sample, _to_sample
from .edges import EdgeOperator


def circle_arrays(rng: np.random.Generator, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """One ``([H, W, 3] float image, [H, W] uint8 mask)`` pair."""
    r = rng.uniform(0.12, 0.3) * resolution
    cy, cx = rng.uniform(r + 1, resolution - r - 1, size=2)
    yy, xx = np.mgrid[:resolution, :resolution]
    mask = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint8)

    background = rng.uniform(0.1, 0.4, size=3)
    foreground = np.clip(background + rng.uniform(0.3, 0.5) * np.array([1.0, 0.4, 0.3]), 0, 1)
    image = np.where(mask[..., None] > 0, foreground, background)
    image = image + rng.normal(0.0, 0.06, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask


def circle_samples(n: int = 8, resolution: int = 64, seed: int = 0, op: EdgeOperator = EdgeOperator()) -> list[Sample]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        image, mask = circle_arrays(rng, resolution)
        out.append(_to_sample(image, mask, f"circle_{i:03d}", op))
    return out


def circle_dataset(
    n: int = 8, resolution: int = 64, seed: int = 0, op: EdgeOperator = EdgeOperator()
) -> tuple[DatasetSplits, InMemoryDataset]:
    """Overfit fixture: every split holds all ``n`` samples."""
    ds = InMemoryDataset(circle_samples(n, resolution, seed, op))
    return DatasetSplits(ds.ids, ds.ids, ds.ids, seed), ds


def write_circle_folder(root: str | Path, n: int = 10, resolution: int = 64, seed: int = 0) -> Path:
    """Write ``root/images`` and ``root/masks`` PNGs in the folder-dataset layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        image, mask = circle_arrays(rng, resolution)
        Image.fromarray((image * 255).round().astype(np.uint8)).save(root / "images" / f"img_{i:03d}.png")
        Image.fromarray(mask * 255).save(root / "masks" / f"img_{i:03d}.png")
    return root
