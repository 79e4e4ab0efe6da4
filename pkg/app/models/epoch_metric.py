# app/models/epoch_metric.py
from __future__ import annotations

from sqlalchemy import Float, ForeignKey, Integer, UniqueConstraint
from sqlalchemy.orm import Mapped, mapped_column, relationship

from app.database import Base


class EpochMetric(Base):
    __tablename__ = "epoch_metrics"
    __table_args__ = (UniqueConstraint("run_id", "epoch", name="uq_epoch_metrics_run_epoch"),)

    id: Mapped[int] = mapped_column(primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("training_runs.id"), index=True, nullable=False)
    epoch: Mapped[int] = mapped_column(Integer, nullable=False)

    # null at epoch 0 (no step taken yet)
    loss: Mapped[float | None] = mapped_column(Float, nullable=True)
    val_hit1: Mapped[float | None] = mapped_column(Float, nullable=True)
    n_pseudo: Mapped[int] = mapped_column(Integer, default=0, nullable=False)

    run = relationship("TrainingRun", back_populates="epochs")
