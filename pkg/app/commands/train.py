# app/commands/train.py
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import click
from sqlalchemy.orm import sessionmaker

from app import __version__
from app.align.checkpoint import save_checkpoint
from app.align.errors import ConfigError
from app.align.folds import FoldJob, run_folds, summarize_folds
from app.align.kg import split_seeds
from app.align.run_store import RunRecorder
from app.align.schemas import RunManifest, TrainConfig, config_payload, resolve_config
from app.align.soft_labels import SoftLabelSet, write_soft_label_audit
from app.align.trainer import ObserverChain, TrainingObserver, evaluate_checkpoint, train
from app.commands.common import DataPaths, config_options, data_options, echo_json, load_data, pop_overrides
from app.config import DATABASE_URL, RECORD_RUNS
from app.database import init_db, make_engine

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.json"
MANIFEST_FILE = "manifest.json"
TRACE_FILE = "trace.jsonl"
REPORT_FILE = "report.json"
SOFT_LABEL_FILE = "soft_labels.tsv"
SUMMARY_FILE = "summary.json"


class SoftLabelAudit(TrainingObserver):
    """Rewrites the audit file at every soft-label refresh; the file holds the latest one."""

    def __init__(self, path: Path) -> None:
        self.path = path

    def on_soft_labels(self, epoch: int, labels: SoftLabelSet) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        write_soft_label_audit(labels, self.path)


@dataclass(frozen=True)
class TrainJob:
    paths: DataPaths
    config: dict[str, Any]
    out_dir: str
    per_fold_dirs: bool = False
    preset: str | None = None
    ablations: tuple[str, ...] = ()
    record: bool = False
    database_url: str = DATABASE_URL

    def fold_dir(self, fold: int) -> Path:
        base = Path(self.out_dir)
        return base / f"fold_{fold}" if self.per_fold_dirs else base


def train_fold(job: FoldJob) -> dict[str, Any]:
    """Train and evaluate one fold, writing its artifacts. Module-level so a process pool can run it."""
    task: TrainJob = job.payload
    cfg = TrainConfig.model_validate(task.config)
    data = load_data(task.paths)
    try:
        split = split_seeds(data.seeds, cfg.split_ratios, cfg.rng_seed, fold=job.fold, n_folds=cfg.n_folds)
    except ValueError as exc:
        raise ConfigError(str(exc), field="n_folds") from exc

    out = task.fold_dir(job.fold)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.build(
        cfg,
        tool_version=__version__,
        fold=job.fold,
        preset=task.preset,
        ablations=task.ablations,
        input_files=task.paths.input_files(),
    )
    (out / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")

    recorder = engine = None
    if task.record:
        engine = make_engine(task.database_url)
        init_db(engine)
        recorder = RunRecorder(sessionmaker(bind=engine, autoflush=False, future=True))
    audit = SoftLabelAudit(out / SOFT_LABEL_FILE) if cfg.soft_labels.use_soft_labels else None

    try:
        logger.info(
            "fold=%d train=%d validation=%d test=%d digest=%s",
            job.fold, len(split.train), len(split.validation), len(split.test), manifest.config_digest[:12],
        )
        ckpt = train(
            data.kg1, data.kg2, split, cfg, data.features1, data.features2,
            relation_embedder1=data.relation_embedder1,
            relation_embedder2=data.relation_embedder2,
            observer=ObserverChain(recorder, audit),
        )
        ckpt_path = save_checkpoint(ckpt, out / CHECKPOINT_FILE)
        with (out / TRACE_FILE).open("w", encoding="utf-8", newline="\n") as fh:
            for rec in ckpt.history:
                fh.write(json.dumps(rec.as_trace(), sort_keys=True) + "\n")
        report = {**evaluate_checkpoint(ckpt), "fold": job.fold, "best_epoch": ckpt.best_epoch, "epoch": ckpt.epoch}
        (out / REPORT_FILE).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if recorder is not None:
            recorder.complete(report, str(ckpt_path))
        return report
    finally:
        if recorder is not None:
            recorder.close()
        if engine is not None:
            engine.dispose()


@click.command("train")
@data_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True, help="Output directory.")
@click.option("--fold", type=int, default=0, show_default=True, help="Fold index for a single-fold run.")
@click.option("--folds", "n_run", type=int, default=1, show_default=True, help="Run folds 0..N-1 and write summary.json.")
@click.option("--parallel-folds", is_flag=True, help="Run folds in a process pool.")
@click.option("--record/--no-record", default=RECORD_RUNS, show_default=True, help="Write the run to the registry database.")
@config_options
def train_command(out_dir: Path, fold: int, n_run: int, parallel_folds: bool, record: bool, preset, config_file, ablate, **kwargs):
    """Train the aligner and write checkpoint, manifest, trace and test report."""
    overrides = pop_overrides(kwargs)
    paths = DataPaths.from_kwargs(kwargs)
    cfg = resolve_config(preset, config_file, overrides, ablate)
    if n_run < 1 or n_run > cfg.n_folds:
        raise ConfigError(f"must lie in [1, n_folds={cfg.n_folds}], got {n_run}", field="folds")

    job = TrainJob(
        paths=paths,
        config=config_payload(cfg),
        out_dir=str(out_dir),
        per_fold_dirs=n_run > 1,
        preset=preset,
        ablations=tuple(ablate),
        record=record,
    )
    if n_run == 1:
        echo_json(train_fold(FoldJob(fold, job)))
        return

    reports = run_folds(train_fold, [job] * n_run, parallel=parallel_folds)
    echo_json(summarize_folds(reports), out_dir / SUMMARY_FILE)
