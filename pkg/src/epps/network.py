"""EPPS segmentation network.

Encoder features ``f1..f4`` feed an edge branch (EME) and per-level
decouplers (SFD).  The significant halves go through a U-Net style decoder
whose blocks receive edge features through channel/spatial attention (EII);
a fusion head (FFM) produces the mask logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from .errors import ConfigError, ShapeError

ABLATIONS = ("baseline", "sfd_only", "eme_eii_only", "full")
BACKBONES = ("resnet50", "tiny")


@dataclass(frozen=True)
class Widths:
    encoder: tuple[int, int, int, int]
    edge: int
    decoder: tuple[int, int, int, int]
    fusion: int
    attention_ratio: int
    mine_hidden: int


WIDTHS = {
    "resnet50": Widths((256, 512, 1024, 2048), 64, (256, 128, 64, 64), 64, 16, 256),
    "tiny": Widths((16, 32, 64, 128), 16, (64, 32, 16, 16), 16, 4, 64),
}


@dataclass
class DecoupledPair:
    s: torch.Tensor
    u: torch.Tensor
    level: int


@dataclass
class ModelOutput:
    mask_logits: torch.Tensor
    edge_logits: Optional[torch.Tensor]
    f_e: Optional[torch.Tensor]
    pairs: list[DecoupledPair] = field(default_factory=list)


def _up(x: torch.Tensor, size) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class CBR(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3, stride: int = 1):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel_size, stride=stride, padding=kernel_size // 2, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class ResNet50Encoder(nn.Module):
    def __init__(self, pretrained: bool = False):
        super().__init__()
        weights = torchvision.models.ResNet50_Weights.IMAGENET1K_V1 if pretrained else None
        net = torchvision.models.resnet50(weights=weights)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.stages = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])


class TinyEncoder(nn.Module):
    """Plain convolutional stand-in with the same 4/8/16/32 stride schedule."""

    def __init__(self, widths=(16, 32, 64, 128)):
        super().__init__()
        self.stem = CBR(3, widths[0], stride=2)
        chans = (widths[0],) + tuple(widths)
        self.stages = nn.ModuleList(
            nn.Sequential(CBR(chans[i], chans[i + 1], stride=2), CBR(chans[i + 1], chans[i + 1])) for i in range(4)
        )


def encoder_forward(encoder: nn.Module, image: torch.Tensor) -> list[torch.Tensor]:
    """Feature pyramid ``[f1, f2, f3, f4]`` at strides 4, 8, 16, 32."""
    h, w = image.shape[-2:]
    if h % 32 or w % 32:
        raise ShapeError(f"input spatial size {h}x{w} is not divisible by 32")
    x = encoder.stem(image)
    feats = []
    for stage in encoder.stages:
        x = stage(x)
        feats.append(x)
    return feats


class EdgeMappingEngine(nn.Module):
    """Two pool-down / upsample-concat rounds over ``f1``; returns ``(f_e, edge_logits)``."""

    def __init__(self, in_ch: int, width: int):
        super().__init__()
        self.down1 = CBR(in_ch, width)
        self.down2 = CBR(width, width)
        self.pool = nn.MaxPool2d(2)
        self.up1 = CBR(2 * width, width)
        self.up2 = CBR(2 * width, width)
        self.head = nn.Conv2d(width, 1, 1)

    def forward(self, f1: torch.Tensor, out_size=None):
        h, w = f1.shape[-2:]
        if h % 4 or w % 4:
            raise ShapeError(f"edge branch input {h}x{w} is not divisible by 4")
        t0 = self.down1(f1)
        t1 = self.down2(self.pool(t0))
        bottom = self.pool(t1)
        x = self.up1(torch.cat([_up(bottom, t1.shape[-2:]), t1], dim=1))
        f_e = self.up2(torch.cat([_up(x, t0.shape[-2:]), t0], dim=1))
        out_size = out_size or (4 * h, 4 * w)
        return f_e, _up(self.head(f_e), out_size)


class SelectiveFeatureDecoupler(nn.Module):
    def __init__(self, channels: int, level: int):
        super().__init__()
        self.level = level
        self.significant = nn.Sequential(CBR(channels, channels), CBR(channels, channels))
        self.unimportant = nn.Sequential(CBR(channels, channels), CBR(channels, channels))

    def forward(self, f: torch.Tensor) -> DecoupledPair:
        return DecoupledPair(self.significant(f), self.unimportant(f), self.level)


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, ratio: int = 16):
        super().__init__()
        hidden = max(1, channels // ratio)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1, bias=False),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        avg = self.mlp(F.adaptive_avg_pool2d(x, 1))
        mx = self.mlp(F.adaptive_max_pool2d(x, 1))
        return torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class EdgeInformationInjector(nn.Module):
    def __init__(self, dec_ch: int, edge_ch: int, ratio: int = 16):
        super().__init__()
        self.ca = ChannelAttention(edge_ch, ratio)
        self.sa = SpatialAttention(7)
        self.proj = nn.Conv2d(dec_ch + edge_ch, dec_ch, 1)

    def attend(self, f_e: torch.Tensor, size) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """``(channel weights, spatial weights, f_csa)`` for ``f_e`` resized to ``size``."""
        f_e = _up(f_e, size)
        ca = self.ca(f_e)
        f_ca = f_e * ca
        sa = self.sa(f_ca)
        return ca, sa, f_ca * sa

    def forward(self, x: torch.Tensor, f_e: torch.Tensor) -> torch.Tensor:
        _, _, f_csa = self.attend(f_e, x.shape[-2:])
        return self.proj(torch.cat([x, f_csa], dim=1))


class DecoderBlock(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int, upsample: bool, eii: Optional[EdgeInformationInjector]):
        super().__init__()
        self.upsample = upsample
        self.convs = nn.Sequential(CBR(in_ch + skip_ch, out_ch), CBR(out_ch, out_ch))
        self.eii = eii

    def forward(self, x: torch.Tensor, skip: Optional[torch.Tensor], f_e: Optional[torch.Tensor]) -> torch.Tensor:
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        if skip is not None:
            if skip.shape[-2:] != x.shape[-2:] or skip.shape[0] != x.shape[0]:
                raise ShapeError(f"skip {tuple(skip.shape)} does not match decoder feature {tuple(x.shape)}")
            x = torch.cat([x, skip], dim=1)
        x = self.convs(x)
        if self.eii is not None and f_e is not None:
            x = self.eii(x, f_e)
        return x


class Decoder(nn.Module):
    """Four blocks from ``s4`` down to stride 4; the last refines at stride 4 without a skip."""

    def __init__(self, enc: tuple[int, ...], dec: tuple[int, ...], edge_ch: Optional[int], ratio: int):
        super().__init__()

        def eii(c):
            return EdgeInformationInjector(c, edge_ch, ratio) if edge_ch else None

        self.blocks = nn.ModuleList(
            [
                DecoderBlock(enc[3], enc[2], dec[0], True, eii(dec[0])),
                DecoderBlock(dec[0], enc[1], dec[1], True, eii(dec[1])),
                DecoderBlock(dec[1], enc[0], dec[2], True, eii(dec[2])),
                DecoderBlock(dec[2], 0, dec[3], False, eii(dec[3])),
            ]
        )

    def forward(self, skips: list[torch.Tensor], f_e: Optional[torch.Tensor]) -> list[torch.Tensor]:
        if len(skips) != 4:
            raise ShapeError(f"expected 4 pyramid levels, got {len(skips)}")
        s1, s2, s3, s4 = skips
        x, outs = s4, []
        for block, skip in zip(self.blocks, (s3, s2, s1, None)):
            x = block(x, skip, f_e)
            outs.append(x)
        return outs


class FeatureFusionModule(nn.Module):
    def __init__(self, in_chs: tuple[int, ...], width: int):
        super().__init__()
        self.align = nn.ModuleList(nn.Conv2d(c, width, 1) for c in in_chs)
        self.fuse = nn.Conv2d(width * len(in_chs), width, 1)
        self.head = nn.Conv2d(width, 1, 1)

    def forward(self, feats: list[torch.Tensor], out_size) -> torch.Tensor:
        size = feats[-1].shape[-2:]
        aligned = [conv(_up(f, size)) for conv, f in zip(self.align, feats)]
        fused = self.fuse(torch.cat(aligned, dim=1)) + aligned[-1]
        return _up(self.head(fused), out_size)


class EPPS(nn.Module):
    def __init__(
        self,
        backbone: str = "tiny",
        ablation: str = "full",
        pretrained: bool = False,
        eme_input: str = "raw",
    ):
        super().__init__()
        if backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {backbone!r}; expected one of {BACKBONES}")
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
        if eme_input not in ("raw", "decoupled"):
            raise ConfigError(f"eme_input must be 'raw' or 'decoupled', got {eme_input!r}")
        self.backbone = backbone
        self.ablation = ablation
        self.eme_input = eme_input
        self.widths = w = WIDTHS[backbone]
        self.use_sfd = ablation in ("sfd_only", "full")
        self.use_edge = ablation in ("eme_eii_only", "full")

        self.encoder = ResNet50Encoder(pretrained) if backbone == "resnet50" else TinyEncoder(w.encoder)
        if self.use_sfd:
            self.bridges = nn.ModuleList(SelectiveFeatureDecoupler(c, i + 1) for i, c in enumerate(w.encoder))
        else:
            self.bridges = nn.ModuleList(CBR(c, c) for c in w.encoder)
        self.eme = EdgeMappingEngine(w.encoder[0], w.edge) if self.use_edge else None
        self.decoder = Decoder(w.encoder, w.decoder, w.edge if self.use_edge else None, w.attention_ratio)
        self.ffm = FeatureFusionModule(w.decoder, w.fusion)

        init_weights(self.bridges)
        if self.eme is not None:
            init_weights(self.eme)
        init_weights(self.decoder)
        init_weights(self.ffm)
        if not (pretrained and backbone == "resnet50"):
            init_weights(self.encoder)

    def forward(self, image: torch.Tensor) -> ModelOutput:
        size = image.shape[-2:]
        feats = encoder_forward(self.encoder, image)
        pairs: list[DecoupledPair] = []
        if self.use_sfd:
            pairs = [bridge(f) for bridge, f in zip(self.bridges, feats)]
            skips = [p.s for p in pairs]
        else:
            skips = [bridge(f) for bridge, f in zip(self.bridges, feats)]

        f_e = edge_logits = None
        if self.eme is not None:
            f_e, edge_logits = self.eme(feats[0] if self.eme_input == "raw" else skips[0], size)

        dec = self.decoder(skips, f_e)
        return ModelOutput(self.ffm(dec, size), edge_logits, f_e, pairs)
