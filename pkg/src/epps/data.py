"""Image/mask folder datasets, seeded 8:1:1 splits and paired augmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
from PIL import Image
from scipy import ndimage
from torch.utils.data import Dataset

from .edges import EdgeOperator, edge_map
from .errors import ConfigError, DatasetIntegrityError, ValidationError

MASK_THRESHOLD = 127


@dataclass(frozen=True)
class Sample:
    image: torch.Tensor  # [3, H, W] float32 in [0, 1]
    mask: torch.Tensor  # [1, H, W] float32 in {0, 1}
    edge: torch.Tensor  # [1, H, W] float32 in {0, 1}
    id: str

    def __post_init__(self):
        h, w = self.image.shape[-2:]
        if self.image.shape[0] != 3 or self.mask.shape != (1, h, w) or self.edge.shape != (1, h, w):
            raise ValidationError(
                f"sample {self.id!r}: misaligned shapes image={tuple(self.image.shape)} "
                f"mask={tuple(self.mask.shape)} edge={tuple(self.edge.shape)}"
            )


@dataclass(frozen=True)
class DatasetSplits:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "train": list(self.train), "val": list(self.val), "test": list(self.test)},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetSplits":
        d = json.loads(text)
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d["seed"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "DatasetSplits":
        return cls.from_json(Path(path).read_text())

    def ids(self, split: str) -> tuple[str, ...]:
        if split not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {split!r}")
        return getattr(self, split)


def split_sizes(n: int) -> tuple[int, int, int]:
    """8:1:1 sizes; the remainder of the flooring goes to train."""
    n_val = n // 10
    n_test = n // 10
    return n - n_val - n_test, n_val, n_test


def split_ids(ids: Sequence[str], seed: int) -> DatasetSplits:
    if not ids:
        raise DatasetIntegrityError("empty dataset")
    ordered = sorted(ids)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    n_train, n_val, _ = split_sizes(len(shuffled))
    return DatasetSplits(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
        seed=seed,
    )


class SampleSource(Protocol):
    resolution: int

    def get(self, sample_id: str) -> Sample: ...


def _to_sample(image: np.ndarray, mask: np.ndarray, sample_id: str, op: EdgeOperator) -> Sample:
    edge = edge_map(mask, op)
    return Sample(
        image=torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32)),
        mask=torch.from_numpy(mask[None].astype(np.float32)),
        edge=torch.from_numpy(edge[None].astype(np.float32)),
        id=sample_id,
    )


def load_image(path: str | Path, resolution: int | None = None) -> np.ndarray:
    """RGB image as ``[H, W, 3]`` float32 in [0, 1], bilinear-resized if requested."""
    img = Image.open(path).convert("RGB")
    if resolution is not None:
        img = img.resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def load_mask(path: str | Path, resolution: int | None = None) -> np.ndarray:
    m = Image.open(path).convert("L")
    if resolution is not None:
        m = m.resize((resolution, resolution), Image.NEAREST)
    return (np.asarray(m) > MASK_THRESHOLD).astype(np.uint8)


class FolderDataset:
    """``root/images/*.png`` paired with ``root/masks/*.png`` by filename stem."""

    def __init__(self, root: str | Path, resolution: int = 256, op: EdgeOperator = EdgeOperator()):
        if resolution <= 0:
            raise ConfigError(f"resolution must be positive, got {resolution}")
        self.root = Path(root)
        self.resolution = resolution
        self.op = op
        image_dir, mask_dir = self.root / "images", self.root / "masks"
        for d in (image_dir, mask_dir):
            if not d.is_dir():
                raise ConfigError(f"missing directory: {d}")
        images = {p.stem: p for p in sorted(image_dir.glob("*.png"))}
        masks = {p.stem: p for p in sorted(mask_dir.glob("*.png"))}
        for stem, p in images.items():
            if stem not in masks:
                raise DatasetIntegrityError(f"image without matching mask: {p.name}")
        if not images:
            raise DatasetIntegrityError(f"no images found under {image_dir}")
        self._images = images
        self._masks = masks
        self.ids = tuple(sorted(images))

    def __len__(self) -> int:
        return len(self.ids)

    def get(self, sample_id: str) -> Sample:
        image = load_image(self._images[sample_id], self.resolution)
        mask = load_mask(self._masks[sample_id], self.resolution)
        return _to_sample(image, mask, sample_id, self.op)


class InMemoryDataset:
    def __init__(self, samples: Sequence[Sample]):
        if not samples:
            raise DatasetIntegrityError("empty dataset")
        self._samples = {s.id: s for s in samples}
        self.ids = tuple(s.id for s in samples)
        self.resolution = int(samples[0].image.shape[-1])

    def __len__(self) -> int:
        return len(self.ids)

    def get(self, sample_id: str) -> Sample:
        return self._samples[sample_id]


def load_dataset(
    root: str | Path, resolution: int = 256, seed: int = 0, op: EdgeOperator = EdgeOperator()
) -> tuple[DatasetSplits, FolderDataset]:
    ds = FolderDataset(root, resolution, op)
    return split_ids(ds.ids, seed), ds


# -- augmentation -----------------------------------------------------------


@dataclass(frozen=True)
class AugmentParams:
    angle: float = 0.0  # degrees, counter-clockwise
    vflip: bool = False
    hflip: bool = False


def draw_augment(rng: np.random.Generator, max_angle: float = 30.0) -> AugmentParams:
    angle = float(rng.uniform(-max_angle, max_angle)) if max_angle > 0 else 0.0
    return AugmentParams(angle=angle, vflip=bool(rng.random() < 0.5), hflip=bool(rng.random() < 0.5))


def _rotate(arr: np.ndarray, angle: float, order: int) -> np.ndarray:
    """Rotate the trailing two axes about the centre, zero fill outside the frame."""
    if angle % 90 == 0:
        return np.rot90(arr, k=int(angle // 90) % 4, axes=(-2, -1))
    axes = (arr.ndim - 2, arr.ndim - 1)
    return ndimage.rotate(arr, angle, axes=axes, reshape=False, order=order, mode="constant", cval=0.0)


def apply_augment(sample: Sample, params: AugmentParams, op: EdgeOperator = EdgeOperator()) -> Sample:
    if params == AugmentParams():
        return sample
    image = sample.image.numpy()
    mask = sample.mask.numpy()[0]
    if params.angle:
        image = np.clip(_rotate(image, params.angle, order=1), 0.0, 1.0)
        mask = _rotate(mask, params.angle, order=0)
    if params.vflip:
        image, mask = image[:, ::-1, :], mask[::-1, :]
    if params.hflip:
        image, mask = image[:, :, ::-1], mask[:, ::-1]
    mask = (mask > 0.5).astype(np.uint8)
    # edges are recomputed from the transformed mask rather than transformed themselves
    return _to_sample(np.ascontiguousarray(image.transpose(1, 2, 0)), mask, sample.id, op)


def augment(
    sample: Sample, rng: np.random.Generator, op: EdgeOperator = EdgeOperator(), max_angle: float = 30.0
) -> Sample:
    return apply_augment(sample, draw_augment(rng, max_angle), op)


class SegmentationSet(Dataset):
    """Torch view over a subset of a sample source.

    Augmentation draws come from ``(seed, epoch, index)`` so a given item is
    reproducible regardless of worker scheduling.
    """

    def __init__(
        self,
        source: SampleSource,
        ids: Sequence[str],
        augment: bool = False,
        op: EdgeOperator = EdgeOperator(),
        seed: int = 0,
        max_angle: float = 30.0,
    ):
        self.source = source
        self.ids = list(ids)
        self.augment = augment
        self.op = op
        self.seed = seed
        self.max_angle = max_angle
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, index: int):
        sample = self.source.get(self.ids[index])
        if self.augment:
            rng = np.random.default_rng([self.seed, self.epoch, index])
            sample = augment(sample, rng, self.op, self.max_angle)
        return sample.image, sample.mask, sample.edge
