"""Command-line entry point: ``epps <subcommand> ...``.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .config import TrainConfig, load_config
from .data import FolderDataset, load_mask, split_ids
from .edges import EdgeKind, EdgeOperator, edge_map
from .engine import evaluate, load_checkpoint, predict, predict_split, train
from .errors import EppsError, NonFiniteLossError

log = logging.getLogger("epps")

SWEEP_VALUES = (1.0, 0.1, 0.01)
ABLATION_PRESETS = ("baseline", "sfd_only", "eme_eii_only", "full")
METRIC_COLUMNS = ("mdsc", "miou", "recall", "precision")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with flat dotted keys")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="repeatable; last wins")
    p.add_argument("--runs-dir", default="runs", help="parent directory for run outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epps", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate a dataset folder, write the split manifest and edge maps")
    p.add_argument("--root", required=True)
    p.add_argument("--operator", default="canny", choices=[k.value for k in EdgeKind])
    p.add_argument("--dilation", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one configuration")
    _add_config_args(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", help="write the metrics report JSON here")

    p = sub.add_parser("predict", help="segment image files with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+")
    p.add_argument("--out", default="predictions")
    p.add_argument("--prob", action="store_true", help="also write a 16-bit probability map")
    p.add_argument("--threshold", type=float)

    for name, help_text in (
        ("sweep", "train over the alpha x beta grid {1, 0.1, 0.01}^2"),
        ("ablate", "train the baseline / +SFD / +EME&EII / full presets"),
        ("edges", "train once per edge operator"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_args(p)
        p.add_argument("--jobs", type=int, default=1, help="independent runs in parallel processes")
        if name == "sweep":
            p.add_argument("--plot", action="store_true", help="also render a surface plot of mIoU")
    return parser


# -- subcommands ------------------------------------------------------------------


def cmd_prepare(args) -> int:
    op = EdgeOperator(EdgeKind(args.operator), dilation_radius=args.dilation)
    root = Path(args.root)
    ds = FolderDataset(root, op=op)
    splits = split_ids(ds.ids, args.seed)
    splits.save(root / "splits.json")
    edge_dir = root / f"edges_{op.kind.value}"
    edge_dir.mkdir(exist_ok=True)
    for sample_id in ds.ids:
        mask = load_mask(root / "masks" / f"{sample_id}.png")
        Image.fromarray(edge_map(mask, op) * 255).save(edge_dir / f"{sample_id}.png")
    print(f"{len(ds)} samples: train {len(splits.train)} / val {len(splits.val)} / test {len(splits.test)}")
    return 0


def _run_and_score(flat: dict, run_dir: str) -> dict:
    config = TrainConfig.from_flat(flat)
    ckpt, _ = train(config, run_dir=run_dir)
    report = evaluate(ckpt, "test")
    Path(run_dir, "metrics_test.json").write_text(report.to_json())
    return report.to_dict()


def cmd_train(args) -> int:
    config = load_config(args.config, args.override)
    run_dir = Path(args.runs_dir) / config.name
    ckpt, history = train(config, run_dir=run_dir)
    predict_split(ckpt, run_dir / "predictions", "test")
    print(f"run directory: {run_dir}; epochs {len(history.records)}, best epoch {history.best_epoch}")
    return 0


def cmd_eval(args) -> int:
    report = evaluate(load_checkpoint(args.checkpoint), args.split, args.threshold)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    for image in args.images:
        written = predict(ckpt, image, args.out, save_prob=args.prob, threshold=args.threshold)
        print(" ".join(str(p) for p in written.values()))
    return 0


def _run_grid(jobs: Sequence[tuple[dict, str]], n_jobs: int) -> list[dict]:
    if n_jobs <= 1:
        return [_run_and_score(flat, run_dir) for flat, run_dir in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_and_score, *zip(*jobs)))


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_sweep(args) -> int:
    base = load_config(args.config, args.override)
    out = Path(args.runs_dir) / f"{base.name}_sweep"
    out.mkdir(parents=True, exist_ok=True)
    grid = [(a, b) for a in SWEEP_VALUES for b in SWEEP_VALUES]
    jobs = [(base.replace(alpha=a, beta=b).to_flat(), str(out / f"alpha{a}_beta{b}")) for a, b in grid]
    reports = _run_grid(jobs, args.jobs)
    rows = [(a, b, *(r[c] for c in METRIC_COLUMNS)) for (a, b), r in zip(grid, reports)]
    _write_csv(out / "sweep.csv", ("alpha", "beta", *METRIC_COLUMNS), rows)
    if args.plot:
        _plot_surface(rows, out / "sweep_miou.png")
    print(out / "sweep.csv")
    return 0


def _plot_surface(rows, path: Path) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not available; skipping %s", path)
        return
    a = np.log10([r[0] for r in rows])
    b = np.log10([r[1] for r in rows])
    miou = np.array([r[3] for r in rows])
    fig = plt.figure()
    ax = fig.add_subplot(projection="3d")
    ax.plot_trisurf(a, b, miou, cmap="viridis")
    ax.set_xlabel("log10 alpha")
    ax.set_ylabel("log10 beta")
    ax.set_zlabel("mIoU")
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_ablate(args) -> int:
    base = load_config(args.config, args.override)
    out = Path(args.runs_dir) / f"{base.name}_ablate"
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(base.replace(ablation=a).to_flat(), str(out / a)) for a in ABLATION_PRESETS]
    reports = _run_grid(jobs, args.jobs)
    rows = [(a, *(r[c] for c in METRIC_COLUMNS)) for a, r in zip(ABLATION_PRESETS, reports)]
    _write_csv(out / "ablate.csv", ("config", *METRIC_COLUMNS), rows)
    print(out / "ablate.csv")
    return 0


def cmd_edges(args) -> int:
    base = load_config(args.config, args.override)
    out = Path(args.runs_dir) / f"{base.name}_edges"
    out.mkdir(parents=True, exist_ok=True)
    kinds = [k.value for k in EdgeKind]
    jobs = [(base.replace(**{"edge_operator.kind": k}).to_flat(), str(out / k)) for k in kinds]
    reports = _run_grid(jobs, args.jobs)
    rows = [(k, *(r[c] for c in METRIC_COLUMNS)) for k, r in zip(kinds, reports)]
    _write_csv(out / "edges.csv", ("operator", *METRIC_COLUMNS), rows)
    print(out / "edges.csv")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "edges": cmd_edges,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NonFiniteLossError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (EppsError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
