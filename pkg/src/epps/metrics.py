"""Per-image binary segmentation metrics: mDSC, mIoU, recall, precision."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import ShapeError, ValidationError

EPS = 1e-7


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def binarize(probs, threshold: float = 0.5):
    """Strictly-greater-than threshold; a tie counts as background."""
    if isinstance(probs, torch.Tensor):
        return (probs > threshold).to(torch.uint8)
    return (np.asarray(probs) > threshold).astype(np.uint8)


def confusion(pred, gt) -> tuple[int, int, int, int]:
    """``(TP, FP, FN, TN)`` pixel counts."""
    p = _np(pred).astype(bool)
    g = _np(gt).astype(bool)
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return tp, fp, fn, tn


def scores(tp: int, fp: int, fn: int, eps: float = EPS) -> dict[str, float]:
    return {
        "dsc": (2 * tp + eps) / (2 * tp + fp + fn + eps),
        "iou": (tp + eps) / (tp + fp + fn + eps),
        "recall": (tp + eps) / (tp + fn + eps),
        "precision": (tp + eps) / (tp + fp + eps),
    }


@dataclass(frozen=True)
class MetricsReport:
    mdsc: float
    miou: float
    recall: float
    precision: float
    n_images: int
    threshold: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def compute_metrics(preds: Sequence, gts: Sequence, threshold: float = 0.5) -> MetricsReport:
    if len(preds) == 0:
        raise ValidationError("no predictions to evaluate")
    if len(preds) != len(gts):
        raise ValidationError(f"{len(preds)} predictions but {len(gts)} targets")
    per_image = []
    for i, (p, g) in enumerate(zip(preds, gts)):
        p, g = _np(p), _np(g)
        if p.shape != g.shape:
            raise ShapeError(f"image {i}: prediction shape {p.shape} != target shape {g.shape}")
        tp, fp, fn, _ = confusion(binarize(p, threshold), g)
        per_image.append(scores(tp, fp, fn))
    mean = {k: float(np.mean([s[k] for s in per_image])) for k in per_image[0]}
    return MetricsReport(
        mdsc=mean["dsc"],
        miou=mean["iou"],
        recall=mean["recall"],
        precision=mean["precision"],
        n_images=len(per_image),
        threshold=threshold,
    )
