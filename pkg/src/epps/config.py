"""Training configuration with flat dotted-key JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .edges import EdgeKind, EdgeOperator
from .errors import ConfigError
from .network import ABLATIONS, BACKBONES

MINE_MODES = ("joint_min", "adversarial")


@dataclass
class TrainConfig:
    backbone_mode: str = "resnet50"
    resolution: int = 256
    batch_size: Optional[int] = None  # None: 8 for resnet50, 4 for tiny
    lr: float = 1e-4
    alpha: float = 1.0
    beta: float = 1.0
    edge_operator: EdgeOperator = field(default_factory=EdgeOperator)
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    ablation: str = "full"
    mine_mode: str = "joint_min"
    augment: bool = True
    max_angle: float = 30.0
    threshold: float = 0.5
    deterministic: bool = False
    pretrained: bool = False
    eme_input: str = "raw"
    num_workers: int = 0
    data_root: Optional[str] = None
    synthetic_samples: int = 0  # >0 trains on the in-memory circle fixture instead of data_root
    name: str = "run"

    def __post_init__(self):
        if isinstance(self.edge_operator, dict):
            self.edge_operator = EdgeOperator(**self.edge_operator)
        if self.batch_size is None:
            self.batch_size = 8 if self.backbone_mode == "resnet50" else 4
        self.validate()

    @property
    def uses_mine(self) -> bool:
        return self.ablation in ("sfd_only", "full")

    def validate(self) -> None:
        if self.backbone_mode not in BACKBONES:
            raise ConfigError(f"backbone_mode must be one of {BACKBONES}, got {self.backbone_mode!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.mine_mode not in MINE_MODES:
            raise ConfigError(f"mine_mode must be one of {MINE_MODES}, got {self.mine_mode!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha and beta must be non-negative, got {self.alpha}, {self.beta}")
        if self.resolution <= 0 or self.resolution % 32:
            raise ConfigError(f"resolution must be a positive multiple of 32, got {self.resolution}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.uses_mine and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 when the MI penalty is active")
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.max_epochs < 0 or self.patience < 0:
            raise ConfigError("max_epochs and patience must be non-negative")

    # -- flat dotted keys ---------------------------------------------------

    def to_flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, EdgeOperator):
                for g in dataclasses.fields(v):
                    gv = getattr(v, g.name)
                    out[f"{f.name}.{g.name}"] = gv.value if isinstance(gv, EdgeKind) else gv
            else:
                out[f.name] = v
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "TrainConfig":
        known = _flat_keys()
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        top: dict[str, Any] = {}
        edge: dict[str, Any] = {}
        for k, v in flat.items():
            if k.startswith("edge_operator."):
                edge[k.split(".", 1)[1]] = v
            else:
                top[k] = v
        try:
            return cls(**top, edge_operator=EdgeOperator(**edge))
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_flat(json.loads(text))

    def replace(self, **changes) -> "TrainConfig":
        flat = self.to_flat()
        flat.update(changes)
        return TrainConfig.from_flat(flat)


def _flat_keys() -> set[str]:
    keys = {f.name for f in dataclasses.fields(TrainConfig) if f.name != "edge_operator"}
    keys |= {f"edge_operator.{g.name}" for g in dataclasses.fields(EdgeOperator)}
    return keys


_FIELD_TYPES = {
    **{f.name: f.type for f in dataclasses.fields(TrainConfig)},
    **{f"edge_operator.{g.name}": g.type for g in dataclasses.fields(EdgeOperator)},
}


def parse_value(key: str, raw: str) -> Any:
    """Coerce an override string to the type of ``key``."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    typ = str(_FIELD_TYPES[key])
    if raw.lower() in ("none", "null") and "Optional" in typ:
        return None
    try:
        if "bool" in typ:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e
    return raw


def parse_overrides(pairs: list[str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        out[key] = parse_value(key, raw.strip())  # last one wins
    return out


def load_config(path: Optional[str | Path] = None, overrides: Optional[list[str]] = None) -> TrainConfig:
    flat: dict[str, Any] = {}
    if path is not None:
        try:
            flat = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(flat, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    flat.update(parse_overrides(overrides or []))
    return TrainConfig.from_flat(flat)
