"""Training, evaluation, checkpointing and single-image prediction."""

from __future__ import annotations

import contextlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image
from torch.utils.data import DataLoader

from .config import TrainConfig
from .data import DatasetSplits, SampleSource, SegmentationSet, load_dataset, load_image
from .errors import ConfigError, NonFiniteLossError
from .losses import LossBundle, joint_loss
from .metrics import MetricsReport, binarize, compute_metrics
from .mine import MineHead, loss_mi
from .network import EPPS
from .synthetic import circle_dataset

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "epps-checkpoint"
CHECKPOINT_VERSION = 1
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class EpochRecord:
    epoch: int
    loss_mask: float
    loss_edge: float
    loss_mi: float
    loss_joint: float
    val: MetricsReport
    seconds: float

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "epoch": self.epoch,
            "loss_mask": self.loss_mask,
            "loss_edge": self.loss_edge,
            "loss_mi": self.loss_mi,
            "loss_joint": self.loss_joint,
            "val": self.val.to_dict(),
        }
        if timing:
            d["seconds"] = self.seconds
        return d


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def to_json(self, timing: bool = False) -> str:
        """History as JSON; wall-clock times are left out unless ``timing`` so
        that identical runs produce identical files."""
        return json.dumps(
            {
                "best_epoch": self.best_epoch,
                "stopped_early": self.stopped_early,
                "epochs": [r.to_dict(timing) for r in self.records],
            },
            indent=2,
        )


# -- checkpoints --------------------------------------------------------------


def build_model(config: TrainConfig) -> tuple[EPPS, Optional[MineHead]]:
    model = EPPS(config.backbone_mode, config.ablation, config.pretrained, config.eme_input)
    mine = MineHead(model.widths.encoder, model.widths.mine_hidden) if model.use_sfd else None
    return model, mine


def make_checkpoint(config: TrainConfig, model: EPPS, mine: Optional[MineHead], epoch: Optional[int] = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_flat(),
        "epoch": epoch,
        "model": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "mine": None if mine is None else {k: v.detach().clone() for k, v in mine.state_dict().items()},
    }


def save_checkpoint(ckpt: dict, path: str | Path) -> None:
    torch.save(ckpt, path)


def load_checkpoint(path: str | Path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not an EPPS checkpoint")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {ckpt.get('version')}")
    return ckpt


def restore(ckpt: dict) -> tuple[TrainConfig, EPPS, Optional[MineHead]]:
    config = TrainConfig.from_flat(ckpt["config"])
    model, mine = build_model(config.replace(pretrained=False))
    model.load_state_dict(ckpt["model"])
    if mine is not None and ckpt.get("mine") is not None:
        mine.load_state_dict(ckpt["mine"])
    model.eval()
    return config, model, mine


# -- data -----------------------------------------------------------------------


def resolve_data(config: TrainConfig) -> tuple[DatasetSplits, SampleSource]:
    if config.synthetic_samples > 0:
        return circle_dataset(config.synthetic_samples, config.resolution, config.seed, config.edge_operator)
    if not config.data_root:
        raise ConfigError("set data_root or synthetic_samples")
    root = Path(config.data_root)
    splits, ds = load_dataset(root, config.resolution, config.seed, config.edge_operator)
    manifest = root / "splits.json"
    if manifest.exists():
        splits = DatasetSplits.load(manifest)
    return splits, ds


# -- training ------------------------------------------------------------------


@contextlib.contextmanager
def _determinism(config: TrainConfig):
    """Seed, and in deterministic mode pin algorithms and threads for the duration."""
    torch.manual_seed(config.seed)
    if not config.deterministic:
        yield
        return
    prev_algos = torch.are_deterministic_algorithms_enabled()
    prev_threads = torch.get_num_threads()
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev_algos)
        torch.set_num_threads(prev_threads)


def _check_finite(bundle: LossBundle) -> None:
    for name, value in (
        ("loss_mask", bundle.loss_mask),
        ("loss_edge", bundle.loss_edge),
        ("loss_mi", bundle.loss_mi),
        ("loss_joint", bundle.loss_joint),
    ):
        v = float(value.detach())
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)


def train_step(
    model: EPPS,
    mine: Optional[MineHead],
    optimizer: torch.optim.Optimizer,
    batch,
    config: TrainConfig,
    step: int,
) -> LossBundle:
    images, masks, edges = batch
    out = model(images)
    if mine is not None:
        # fresh marginal pairing per step, derived from the step counter
        gen = torch.Generator().manual_seed(config.seed * 1_000_003 + step)
        lmi, _ = loss_mi(out.pairs, mine, gen, adversarial=config.mine_mode == "adversarial")
    else:
        lmi = torch.zeros(())
    bundle = joint_loss(out.mask_logits, masks, out.edge_logits, edges, lmi, config.alpha, config.beta)
    _check_finite(bundle)
    optimizer.zero_grad(set_to_none=True)
    bundle.loss_joint.backward()
    optimizer.step()
    return bundle


@torch.no_grad()
def predict_probs(model: EPPS, images: torch.Tensor) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
    model.eval()
    out = model(images)
    edge = torch.sigmoid(out.edge_logits) if out.edge_logits is not None else None
    return torch.sigmoid(out.mask_logits), edge


def evaluate_model(
    model: EPPS, source: SampleSource, ids: Sequence[str], threshold: float = 0.5, batch_size: int = 8
) -> MetricsReport:
    loader = DataLoader(SegmentationSet(source, ids), batch_size=batch_size, shuffle=False)
    preds, gts = [], []
    for images, masks, _ in loader:
        probs, _ = predict_probs(model, images)
        preds.extend(probs)
        gts.extend(masks)
    return compute_metrics(preds, gts, threshold)


def train(
    config: TrainConfig,
    splits: Optional[DatasetSplits] = None,
    source: Optional[SampleSource] = None,
    run_dir: Optional[str | Path] = None,
) -> tuple[dict, TrainHistory]:
    """Train until ``max_epochs`` or until validation mDSC stalls for ``patience`` epochs.

    Returns the best-validation checkpoint and the history. When ``run_dir``
    is given, ``config.json``, ``history.json``, ``timing.json`` and
    ``best.ckpt`` are written there.
    """
    config.validate()
    if splits is None or source is None:
        splits, source = resolve_data(config)
    with _determinism(config):
        return _train(config, splits, source, run_dir)


def _train(config: TrainConfig, splits: DatasetSplits, source: SampleSource, run_dir) -> tuple[dict, TrainHistory]:
    model, mine = build_model(config)
    params = list(model.parameters()) + (list(mine.parameters()) if mine is not None else [])
    optimizer = torch.optim.Adam(params, lr=config.lr, betas=ADAM_BETAS, eps=ADAM_EPS)

    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(config.to_json())

    train_set = SegmentationSet(
        source, splits.train, config.augment, config.edge_operator, config.seed, config.max_angle
    )
    loader = DataLoader(
        train_set,
        batch_size=config.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(config.seed),
        num_workers=0 if config.deterministic else config.num_workers,
    )
    history = TrainHistory()
    best_state = make_checkpoint(config, model, mine, epoch=None)
    best_mdsc = -math.inf
    step = 0

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        train_set.set_epoch(epoch)
        model.train()
        if mine is not None:
            mine.train()
        sums = np.zeros(4)
        seen = 0
        for batch in loader:
            n = batch[0].shape[0]
            if n < 2 and mine is not None:
                continue  # marginal pairing needs two samples
            bundle = train_step(model, mine, optimizer, batch, config, step)
            step += 1
            f = bundle.as_floats()
            sums += n * np.array([f["loss_mask"], f["loss_edge"], f["loss_mi"], f["loss_joint"]])
            seen += n
        means = sums / max(seen, 1)
        val = evaluate_model(model, source, splits.val, config.threshold, config.batch_size)
        record = EpochRecord(epoch, *map(float, means), val=val, seconds=time.perf_counter() - t0)
        history.records.append(record)
        log.info(
            "epoch %d loss %.4f (mask %.4f edge %.4f mi %.4f) val mDSC %.4f",
            epoch, record.loss_joint, record.loss_mask, record.loss_edge, record.loss_mi, val.mdsc,
        )
        if val.mdsc > best_mdsc:
            best_mdsc = val.mdsc
            history.best_epoch = epoch
            best_state = make_checkpoint(config, model, mine, epoch)
        elif epoch - history.best_epoch >= config.patience:
            history.stopped_early = True
            break

    if run_dir is not None:
        save_checkpoint(best_state, run_dir / "best.ckpt")
        (run_dir / "history.json").write_text(history.to_json())
        (run_dir / "timing.json").write_text(json.dumps([r.seconds for r in history.records]))
    return best_state, history


def evaluate(
    ckpt: dict,
    split: str = "test",
    threshold: Optional[float] = None,
    splits: Optional[DatasetSplits] = None,
    source: Optional[SampleSource] = None,
) -> MetricsReport:
    config, model, _ = restore(ckpt)
    if splits is None or source is None:
        splits, source = resolve_data(config)
    return evaluate_model(model, source, splits.ids(split), config.threshold if threshold is None else threshold)


def _save_png(arr: np.ndarray, path: Path) -> Path:
    Image.fromarray(arr).save(path)
    return path


def predict(
    ckpt: dict, image_path: str | Path, out_dir: str | Path, save_prob: bool = False, threshold: Optional[float] = None
) -> dict[str, Path]:
    """Write ``<stem>_mask.png`` (and ``_edge.png``, ``_prob.png``) at the source resolution."""
    config, model, _ = restore(ckpt)
    threshold = config.threshold if threshold is None else threshold
    image_path = Path(image_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with Image.open(image_path) as src:
        width, height = src.size
    image = load_image(image_path, config.resolution)
    x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]
    probs, edge_probs = predict_probs(model, x)

    def back_to_source(binary: torch.Tensor) -> np.ndarray:
        img = Image.fromarray(binary.numpy().astype(np.uint8) * 255)
        return np.asarray(img.resize((width, height), Image.NEAREST))

    stem = image_path.stem
    written = {"mask": _save_png(back_to_source(binarize(probs[0, 0], threshold)), out_dir / f"{stem}_mask.png")}
    if edge_probs is not None:
        written["edge"] = _save_png(back_to_source(binarize(edge_probs[0, 0], threshold)), out_dir / f"{stem}_edge.png")
    if save_prob:
        p = Image.fromarray(probs[0, 0].numpy().astype(np.float32), mode="F").resize((width, height), Image.BILINEAR)
        p16 = np.round(np.clip(np.asarray(p), 0.0, 1.0) * 65535).astype(np.uint16)
        path = out_dir / f"{stem}_prob.png"
        Image.fromarray(p16).save(path)
        written["prob"] = path
    return written


def predict_split(ckpt: dict, out_dir: str | Path, split: str = "test", threshold: Optional[float] = None) -> list[Path]:
    """Write binary ``<id>_mask.png`` / ``<id>_edge.png`` for every sample of a split, at working resolution."""
    config, model, _ = restore(ckpt)
    threshold = config.threshold if threshold is None else threshold
    splits, source = resolve_data(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for sample_id in splits.ids(split):
        probs, edge_probs = predict_probs(model, source.get(sample_id).image[None])
        maps = {"mask": probs} if edge_probs is None else {"mask": probs, "edge": edge_probs}
        for kind, p in maps.items():
            arr = binarize(p[0, 0], threshold).numpy().astype(np.uint8) * 255
            written.append(_save_png(arr, out_dir / f"{sample_id}_{kind}.png"))
    return written
