# app/models/training_run.py
from __future__ import annotations

from datetime import datetime

from sqlalchemy import DateTime, Float, Integer, String, Text
from sqlalchemy.orm import Mapped, mapped_column, relationship

from app.database import Base


class TrainingRun(Base):
    __tablename__ = "training_runs"

    id: Mapped[int] = mapped_column(primary_key=True)

    # config digest + rng seed + fold
    run_key: Mapped[str] = mapped_column(String(96), index=True, nullable=False)

    # running -> finished | diverged | failed
    status: Mapped[str] = mapped_column(String(20), default="running", nullable=False)

    fold: Mapped[int] = mapped_column(Integer, default=0, nullable=False)
    rng_seed: Mapped[int] = mapped_column(Integer, default=0, nullable=False)
    config_digest: Mapped[str] = mapped_column(String(64), index=True, nullable=False)
    config_json: Mapped[str] = mapped_column(Text, nullable=False)

    best_epoch: Mapped[int | None] = mapped_column(Integer, nullable=True)
    best_val_hit1: Mapped[float | None] = mapped_column(Float, nullable=True)
    test_metrics_json: Mapped[str | None] = mapped_column(Text, nullable=True)
    checkpoint_path: Mapped[str | None] = mapped_column(String(512), nullable=True)
    error: Mapped[str | None] = mapped_column(Text, nullable=True)

    created_at: Mapped[datetime] = mapped_column(
        DateTime, default=datetime.utcnow, nullable=False
    )
    finished_at: Mapped[datetime | None] = mapped_column(DateTime, nullable=True)

    epochs = relationship(
        "EpochMetric", back_populates="run", cascade="all, delete-orphan", order_by="EpochMetric.epoch"
    )
    admissions = relationship(
        "PseudoSeedAdmission", back_populates="run", cascade="all, delete-orphan", order_by="PseudoSeedAdmission.id"
    )
