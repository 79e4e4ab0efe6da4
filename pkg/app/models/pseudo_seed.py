# app/models/pseudo_seed.py
from __future__ import annotations

from sqlalchemy import Boolean, Float, ForeignKey, Integer
from sqlalchemy.orm import Mapped, mapped_column, relationship

from app.database import Base


class PseudoSeedAdmission(Base):
    __tablename__ = "pseudo_seed_admissions"

    id: Mapped[int] = mapped_column(primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("training_runs.id"), index=True, nullable=False)
    epoch: Mapped[int] = mapped_column(Integer, nullable=False)
    kg1_id: Mapped[int] = mapped_column(Integer, nullable=False)
    kg2_id: Mapped[int] = mapped_column(Integer, nullable=False)
    similarity: Mapped[float] = mapped_column(Float, nullable=False)
    # true once the run finishes if the admission is part of the selected checkpoint
    selected: Mapped[bool] = mapped_column(Boolean, default=False, nullable=False)

    run = relationship("TrainingRun", back_populates="admissions")
