"""Binary edge targets derived from binary masks with classical operators."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigError, ValidationError


class EdgeKind(str, enum.Enum):
    SOBEL = "sobel"
    LAPLACIAN = "laplacian"
    CANNY = "canny"
    SCHARR = "scharr"
    PREWITT = "prewitt"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value == value.lower():
                    return member
        return None


@dataclass(frozen=True)
class EdgeOperator:
    kind: EdgeKind = EdgeKind.CANNY
    dilation_radius: int = 0
    canny_low: float = 50.0
    canny_high: float = 150.0
    canny_sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", EdgeKind(self.kind))
        if self.dilation_radius < 0:
            raise ConfigError(f"dilation_radius must be >= 0, got {self.dilation_radius}")
        if self.kind is EdgeKind.CANNY and not self.canny_low < self.canny_high:
            raise ConfigError(f"canny_low ({self.canny_low}) must be below canny_high ({self.canny_high})")


_X_STENCILS = {
    EdgeKind.SOBEL: [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
    EdgeKind.PREWITT: [[-1, 0, 1], [-1, 0, 1], [-1, 0, 1]],
    EdgeKind.SCHARR: [[-3, 0, 3], [-10, 0, 10], [-3, 0, 3]],
}
_LAPLACIAN = [[0, 1, 0], [1, -4, 1], [0, 1, 0]]


def kernel_of(kind: EdgeKind | str) -> tuple[np.ndarray, ...]:
    """Return ``(kx, ky)`` for gradient operators, ``(k,)`` for the Laplacian.

    Canny uses the Sobel pair for its gradient stage.
    """
    kind = EdgeKind(kind)
    if kind is EdgeKind.LAPLACIAN:
        return (np.array(_LAPLACIAN, dtype=np.int64),)
    kx = np.array(_X_STENCILS[EdgeKind.SOBEL if kind is EdgeKind.CANNY else kind], dtype=np.int64)
    return kx, kx.T.copy()


def _correlate(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    # mode="nearest" is replicate padding
    return ndimage.correlate(img, k, mode="nearest")


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return xx * xx + yy * yy <= radius * radius


def boundary_band(mask: np.ndarray) -> np.ndarray:
    """Pixels whose closed 3x3 neighbourhood holds both mask values."""
    m = np.asarray(mask, dtype=np.uint8)
    has_fg = ndimage.maximum_filter(m, size=3, mode="nearest") > 0
    has_bg = ndimage.minimum_filter(m, size=3, mode="nearest") == 0
    return has_fg & has_bg


_TAN_22_5 = math.tan(math.radians(22.5))
_TAN_67_5 = math.tan(math.radians(67.5))


def _canny(mask: np.ndarray, op: EdgeOperator) -> np.ndarray:
    img = mask.astype(np.float64) * 255.0
    smooth = ndimage.gaussian_filter(img, sigma=op.canny_sigma, mode="nearest")
    # fixed-point grid keeps later stages exact, so flipped inputs give flipped outputs
    scale = 10**6
    q = np.rint(smooth * scale).astype(np.int64)
    kx, ky = kernel_of(EdgeKind.SOBEL)
    gx = _correlate(q, kx)
    gy = _correlate(q, ky)
    mag2 = gx * gx + gy * gy

    ax, ay = np.abs(gx).astype(np.float64), np.abs(gy).astype(np.float64)
    horizontal = ay <= _TAN_22_5 * ax  # gradient along columns
    vertical = ay > _TAN_67_5 * ax
    diag = ~(horizontal | vertical)
    same_sign = (gx * gy) > 0

    padded = np.pad(mag2, 1, mode="constant")
    h, w = mag2.shape

    def shifted(dr: int, dc: int) -> np.ndarray:
        return padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]

    keep = np.zeros_like(mag2, dtype=bool)
    keep |= horizontal & (mag2 >= shifted(0, -1)) & (mag2 >= shifted(0, 1))
    keep |= vertical & (mag2 >= shifted(-1, 0)) & (mag2 >= shifted(1, 0))
    keep |= diag & same_sign & (mag2 >= shifted(-1, -1)) & (mag2 >= shifted(1, 1))
    keep |= diag & ~same_sign & (mag2 >= shifted(-1, 1)) & (mag2 >= shifted(1, -1))
    keep &= mag2 > 0

    mag = np.sqrt(mag2.astype(np.float64)) / scale
    weak = keep & (mag >= op.canny_low)
    strong = keep & (mag >= op.canny_high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros_like(mask, dtype=np.uint8)
    hit = np.zeros(n + 1, dtype=bool)
    hit[np.unique(labels[strong])] = True
    hit[0] = False
    # smoothing can shift a suppression maximum one pixel off the mask boundary
    return (hit[labels] & boundary_band(mask)).astype(np.uint8)


def edge_map(mask: np.ndarray, op: EdgeOperator = EdgeOperator()) -> np.ndarray:
    """Edge map of a 2-D binary mask as a ``uint8`` array of zeros and ones."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"expected a 2-D mask, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValidationError("mask must contain only 0 and 1")
    m = mask.astype(np.int64)

    if op.kind is EdgeKind.CANNY:
        edges = _canny(m, op)
    elif op.kind is EdgeKind.LAPLACIAN:
        (k,) = kernel_of(op.kind)
        edges = (_correlate(m, k) != 0).astype(np.uint8)
    else:
        kx, ky = kernel_of(op.kind)
        edges = ((_correlate(m, kx) != 0) | (_correlate(m, ky) != 0)).astype(np.uint8)

    if op.dilation_radius > 0:
        edges = ndimage.binary_dilation(edges, structure=_disk(op.dilation_radius)).astype(np.uint8)
    return edges


def extract_edge_gt(mask, op: EdgeOperator = EdgeOperator()):
    """Edge ground truth for a ``[1, H, W]`` (or ``[H, W]``) binary mask.

    Returns the same container type as the input: float tensor for tensors,
    ``uint8`` array for arrays.
    """
    if isinstance(mask, torch.Tensor):
        arr = mask.detach().cpu().numpy()
        out = edge_map(arr.reshape(arr.shape[-2:]) if arr.ndim == 3 else arr, op)
        return torch.from_numpy(out.reshape(arr.shape)).to(mask.dtype)
    arr = np.asarray(mask)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ValidationError(f"expected a single-channel mask, got shape {arr.shape}")
        return edge_map(arr[0], op)[None]
    return edge_map(arr, op)
