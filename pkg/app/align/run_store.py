# app/align/run_store.py
"""Training-run registry: a TrainingObserver that writes to the SQLAlchemy tables."""
from __future__ import annotations

import json
import logging
from datetime import datetime
from typing import Callable

from sqlalchemy.orm import Session

from app.align.checkpoint import Admission, Checkpoint, EpochRecord
from app.align.errors import DivergenceError
from app.align.kg import DatasetSplit
from app.align.matcher import SimilarityMatrix
from app.align.schemas import TrainConfig, config_payload
from app.align.soft_labels import SoftLabelSet
from app.align.trainer import TrainingObserver
from app.models.epoch_metric import EpochMetric
from app.models.pseudo_seed import PseudoSeedAdmission
from app.models.training_run import TrainingRun

logger = logging.getLogger(__name__)


def run_key(digest: str, rng_seed: int, fold: int) -> str:
    return f"{digest[:64]}:{rng_seed}:{fold}"


class RunRecorder(TrainingObserver):
    def __init__(self, session_factory: Callable[[], Session]) -> None:
        self._factory = session_factory
        self._db: Session | None = None
        self.run_id: int | None = None

    # ----- observer hooks -----

    def on_start(self, cfg: TrainConfig, split: DatasetSplit, digest: str) -> None:
        self._db = self._factory()
        run = TrainingRun(
            run_key=run_key(digest, cfg.rng_seed, split.fold),
            status="running",
            fold=split.fold,
            rng_seed=cfg.rng_seed,
            config_digest=digest,
            config_json=json.dumps(config_payload(cfg), sort_keys=True),
        )
        self._db.add(run)
        self._db.commit()
        self._db.refresh(run)
        self.run_id = int(run.id)
        logger.info("run registered run_id=%d key=%s", self.run_id, run.run_key)

    def on_epoch(self, record: EpochRecord) -> None:
        self._db.add(
            EpochMetric(
                run_id=self.run_id,
                epoch=record.epoch,
                loss=record.loss,
                val_hit1=record.val_hit1,
                n_pseudo=record.n_pseudo,
            )
        )
        self._db.commit()

    def on_admissions(self, admissions: list[Admission], sim: SimilarityMatrix) -> None:
        if not admissions:
            return
        self._db.add_all(
            PseudoSeedAdmission(
                run_id=self.run_id,
                epoch=a.epoch,
                kg1_id=a.kg1_id,
                kg2_id=a.kg2_id,
                similarity=a.similarity,
            )
            for a in admissions
        )
        self._db.commit()

    def on_soft_labels(self, epoch: int, labels: SoftLabelSet) -> None:
        logger.debug("run_id=%s soft labels epoch=%d fused=%d", self.run_id, epoch, len(labels))

    def on_finish(self, ckpt: Checkpoint) -> None:
        run = self._run()
        run.best_epoch = ckpt.best_epoch
        run.best_val_hit1 = ckpt.best_val_hit1
        # admissions after the checkpoint epoch stay recorded, unselected
        for admission in run.admissions:
            admission.selected = admission.epoch <= ckpt.epoch
        self._db.commit()

    def on_failure(self, exc: Exception) -> None:
        if self._db is None or self.run_id is None:
            return
        self._db.rollback()
        run = self._run()
        run.status = "diverged" if isinstance(exc, DivergenceError) else "failed"
        run.error = str(exc)
        run.finished_at = datetime.utcnow()
        self._db.commit()
        self.close()

    # ----- after training -----

    def complete(self, report: dict, checkpoint_path: str | None = None) -> None:
        run = self._run()
        run.status = "finished"
        run.test_metrics_json = json.dumps(report, sort_keys=True)
        run.checkpoint_path = checkpoint_path
        run.finished_at = datetime.utcnow()
        self._db.commit()
        self.close()

    def close(self) -> None:
        if self._db is not None:
            self._db.close()
            self._db = None

    def _run(self) -> TrainingRun:
        run = self._db.get(TrainingRun, self.run_id)
        if run is None:
            raise LookupError(f"training run {self.run_id} disappeared")
        return run


# ----- reads -----

def run_to_dict(run: TrainingRun, *, detail: bool = False) -> dict:
    out = {
        "id": int(run.id),
        "run_key": run.run_key,
        "status": run.status,
        "fold": int(run.fold),
        "rng_seed": int(run.rng_seed),
        "config_digest": run.config_digest,
        "best_epoch": run.best_epoch,
        "best_val_hit1": run.best_val_hit1,
        "test_metrics": json.loads(run.test_metrics_json) if run.test_metrics_json else None,
        "checkpoint_path": run.checkpoint_path,
        "created_at": run.created_at.isoformat() if run.created_at else None,
        "finished_at": run.finished_at.isoformat() if run.finished_at else None,
    }
    if detail:
        out["config"] = json.loads(run.config_json)
        out["error"] = run.error
        out["epochs"] = [
            {"epoch": m.epoch, "loss": m.loss, "val_hit1": m.val_hit1, "n_pseudo": m.n_pseudo}
            for m in run.epochs
        ]
        out["admissions"] = [
            {
                "epoch": a.epoch,
                "kg1_id": a.kg1_id,
                "kg2_id": a.kg2_id,
                "similarity": a.similarity,
                "selected": bool(a.selected),
            }
            for a in run.admissions
        ]
    return out


def list_runs(db: Session, *, limit: int = 50) -> list[dict]:
    rows = db.query(TrainingRun).order_by(TrainingRun.id.desc()).limit(limit).all()
    return [run_to_dict(r) for r in rows]


def get_run(db: Session, run_id: int) -> dict | None:
    run = db.get(TrainingRun, run_id)
    return run_to_dict(run, detail=True) if run is not None else None
