# app/commands/evaluate.py
from __future__ import annotations

from pathlib import Path

import click

from app.align.checkpoint import load_checkpoint
from app.align.folds import summarize_folds
from app.align.trainer import evaluate_checkpoint
from app.commands.common import echo_json
from app.commands.train import CHECKPOINT_FILE


def _fold_checkpoint(root: Path, fold: int) -> Path:
    return root / f"fold_{fold}" / CHECKPOINT_FILE


@click.command("eval")
@click.option(
    "--checkpoint",
    "checkpoint_path",
    type=click.Path(path_type=Path),
    required=True,
    help="Checkpoint file, a run directory holding checkpoint.json, or (with --folds) the multi-fold output directory.",
)
@click.option("--k", "ks", type=int, multiple=True, help="Hit@k cutoff; repeatable (default: the checkpoint's ks).")
@click.option("--folds", "n_folds", type=int, default=1, show_default=True, help="Evaluate fold_0..fold_{N-1} and report mean and std.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Also write the report to this file.")
def eval_command(checkpoint_path: Path, ks: tuple[int, ...], n_folds: int, out: Path | None) -> None:
    """Report Hit@k and MRR on the test split stored in a checkpoint."""
    if n_folds < 1:
        raise click.BadParameter("must be >= 1", param_hint="--folds")
    if any(k < 1 for k in ks):
        raise click.BadParameter("cutoffs must be >= 1", param_hint="--k")
    cutoffs = tuple(sorted(set(ks))) or None

    if n_folds == 1:
        ckpt = load_checkpoint(checkpoint_path)
        echo_json(evaluate_checkpoint(ckpt, ks=cutoffs), out)
        return

    reports = []
    for fold in range(n_folds):
        ckpt = load_checkpoint(_fold_checkpoint(checkpoint_path, fold))
        reports.append({**evaluate_checkpoint(ckpt, ks=cutoffs), "fold": ckpt.split.fold})
    echo_json(summarize_folds(reports), out)
