# app/commands/sweep.py
from __future__ import annotations

import itertools
import logging
from pathlib import Path

import click

from app.align.folds import FoldJob
from app.align.schemas import config_payload, resolve_config
from app.commands.common import DataPaths, config_options, data_options, echo_json, pop_overrides
from app.commands.train import TrainJob, train_fold

logger = logging.getLogger(__name__)


def cell_name(layers: int, lr: float) -> str:
    return f"layers_{layers}_lr_{lr:g}"


@click.command("sweep")
@data_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True, help="One subdirectory per grid cell.")
@click.option("--grid-layers", type=int, multiple=True, required=True, help="GAT layer count; repeatable.")
@click.option("--grid-lr", type=float, multiple=True, required=True, help="Learning rate; repeatable.")
@click.option("--fold", type=int, default=0, show_default=True, help="Fold every cell is trained on.")
@config_options
def sweep_command(out_dir: Path, grid_layers: tuple[int, ...], grid_lr: tuple[float, ...], fold: int, preset, config_file, ablate, **kwargs):
    """Train over a grid of layer counts and learning rates; print one metric row per cell."""
    overrides = pop_overrides(kwargs)
    paths = DataPaths.from_kwargs(kwargs)
    rows = []
    for layers, lr in itertools.product(sorted(set(grid_layers)), sorted(set(grid_lr))):
        cfg = resolve_config(preset, config_file, {**overrides, "layers": layers, "learning_rate": lr}, ablate)
        job = TrainJob(
            paths=paths,
            config=config_payload(cfg),
            out_dir=str(out_dir / cell_name(layers, lr)),
            preset=preset,
            ablations=tuple(ablate),
        )
        logger.info("sweep cell layers=%d learning_rate=%g", layers, lr)
        report = train_fold(FoldJob(fold, job))
        rows.append({"layers": layers, "learning_rate": lr, **report})
    echo_json({"rows": rows}, out_dir / "sweep.json")
