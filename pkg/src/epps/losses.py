"""DiceBCE segmentation losses and the weighted joint objective."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, ShapeError

DICE_SMOOTH = 1.0
PROB_CLAMP = 1e-7


def _check(probs: torch.Tensor, gt: torch.Tensor) -> None:
    if probs.shape != gt.shape:
        raise ShapeError(f"prediction shape {tuple(probs.shape)} != target shape {tuple(gt.shape)}")


def dice_loss(probs: torch.Tensor, gt: torch.Tensor, smooth: float = DICE_SMOOTH) -> torch.Tensor:
    """One minus the batch-mean soft Dice coefficient (computed per sample)."""
    _check(probs, gt)
    p = probs.reshape(probs.shape[0], -1)
    g = gt.reshape(gt.shape[0], -1).to(p.dtype)
    dsc = (2 * (p * g).sum(1) + smooth) / (p.sum(1) + g.sum(1) + smooth)
    return 1 - dsc.mean()


def bce_loss(probs: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check(probs, gt)
    p = probs.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    g = gt.to(p.dtype)
    return -(g * torch.log(p) + (1 - g) * torch.log(1 - p)).mean()


def dice_bce(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    probs = torch.sigmoid(logits)
    return dice_loss(probs, gt) + bce_loss(probs, gt)


@dataclass
class LossBundle:
    loss_mask: torch.Tensor
    loss_edge: torch.Tensor
    loss_mi: torch.Tensor
    loss_joint: torch.Tensor
    alpha: float
    beta: float

    def as_floats(self) -> dict[str, float]:
        return {
            "loss_mask": float(self.loss_mask.detach()),
            "loss_edge": float(self.loss_edge.detach()),
            "loss_mi": float(self.loss_mi.detach()),
            "loss_joint": float(self.loss_joint.detach()),
        }


def combine(loss_mask, loss_edge, loss_mi, alpha: float = 1.0, beta: float = 1.0) -> LossBundle:
    if alpha < 0 or beta < 0:
        raise ConfigError(f"loss weights must be non-negative, got alpha={alpha}, beta={beta}")
    ref = loss_mask if isinstance(loss_mask, torch.Tensor) else torch.tensor(float(loss_mask))

    def t(v):
        return v if isinstance(v, torch.Tensor) else torch.tensor(float(v), dtype=ref.dtype)

    loss_mask, loss_edge, loss_mi = t(loss_mask), t(loss_edge), t(loss_mi)
    joint = loss_mask + alpha * loss_edge + beta * loss_mi
    return LossBundle(loss_mask, loss_edge, loss_mi, joint, alpha, beta)


def joint_loss(mask_logits, mask_gt, edge_logits, edge_gt, loss_mi, alpha: float = 1.0, beta: float = 1.0) -> LossBundle:
    """Mask loss plus weighted edge and MI terms.

    ``edge_logits=None`` (no edge branch) makes the edge term exactly zero;
    pass ``loss_mi=0`` when there is no decoupler.
    """
    if alpha < 0 or beta < 0:
        raise ConfigError(f"loss weights must be non-negative, got alpha={alpha}, beta={beta}")
    loss_mask = dice_bce(mask_logits, mask_gt)
    loss_edge = dice_bce(edge_logits, edge_gt) if edge_logits is not None else torch.zeros((), dtype=loss_mask.dtype)
    return combine(loss_mask, loss_edge, loss_mi, alpha, beta)
