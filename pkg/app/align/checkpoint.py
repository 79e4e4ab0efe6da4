# app/align/checkpoint.py
"""
Versioned JSON checkpoint, validated through pydantic payload models.

Arrays are stored as {"shape": [rows, cols], "data": [...]} with floats written
by repr, so a reload reproduces every value bit for bit. Keys are sorted and no
timestamps are written: equal runs give byte-identical files.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.align.encoder import EncoderParams
from app.align.errors import CheckpointError
from app.align.kg import DatasetSplit, Origin, SeedAlignment
from app.align.schemas import TrainConfig, validation_message
from app.align.soft_labels import LabelKind, SoftLabel, SoftLabelSet
from app.constants import CHECKPOINT_VERSION

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float | None
    val_hit1: float | None
    n_pseudo: int

    def as_trace(self) -> dict[str, Any]:
        return {"epoch": self.epoch, "loss": self.loss, "val_hit1": self.val_hit1, "n_pseudo": self.n_pseudo}


@dataclass(frozen=True)
class Admission:
    epoch: int
    kg1_id: int
    kg2_id: int
    similarity: float


@dataclass
class Checkpoint:
    config: TrainConfig
    config_digest: str
    epoch: int
    best_epoch: int
    params: dict[str, np.ndarray]
    embeddings1: np.ndarray
    embeddings2: np.ndarray
    outputs1: np.ndarray
    outputs2: np.ndarray
    entity_ids1: tuple[int, ...]
    entity_ids2: tuple[int, ...]
    split: DatasetSplit
    seeds: SeedAlignment
    admissions: list[Admission] = field(default_factory=list)
    history: list[EpochRecord] = field(default_factory=list)
    soft_labels: SoftLabelSet = field(default_factory=SoftLabelSet)
    version: int = CHECKPOINT_VERSION

    def encoder_params(self) -> EncoderParams:
        return EncoderParams.from_arrays(self.params, epsilon=self.config.epsilon, slope=self.config.leaky_slope)

    @property
    def best_val_hit1(self) -> float | None:
        for rec in self.history:
            if rec.epoch == self.best_epoch:
                return rec.val_hit1
        return None


# ----- payload models -----

class ArrayPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shape: list[int]
    data: list[float]

    @model_validator(mode="after")
    def _size_matches_shape(self) -> "ArrayPayload":
        if any(n < 0 for n in self.shape) or math.prod(self.shape) != len(self.data):
            raise ValueError(f"shape {self.shape} does not hold {len(self.data)} values")
        return self

    @classmethod
    def of(cls, a: np.ndarray) -> "ArrayPayload":
        a = np.asarray(a, dtype=np.float64)
        return cls(shape=list(a.shape), data=a.ravel().tolist())

    def to_numpy(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64).reshape(self.shape)


class SidesPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kg1: ArrayPayload
    kg2: ArrayPayload


class EntityIdsPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kg1: list[int]
    kg2: list[int]


SeedRow = tuple[int, int, Origin]


class SplitPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fold: int = Field(ge=0)
    train: list[SeedRow]
    validation: list[SeedRow]
    test: list[SeedRow]


class AdmissionPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch: int
    kg1_id: int
    kg2_id: int
    similarity: float


class EpochPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch: int
    loss: float | None
    val_hit1: float | None
    n_pseudo: int


class SoftLabelPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: LabelKind
    r1: int
    r2: int
    similarity: float
    match_count: int
    support: list[tuple[int, int]]


class CheckpointPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int
    config: TrainConfig
    config_digest: str
    epoch: int = Field(ge=0)
    best_epoch: int = Field(ge=0)
    params: dict[str, ArrayPayload]
    embeddings: SidesPayload
    outputs: SidesPayload
    entity_ids: EntityIdsPayload
    split: SplitPayload
    seeds: list[SeedRow]
    admissions: list[AdmissionPayload]
    history: list[EpochPayload]
    soft_labels: list[SoftLabelPayload]


# ----- encoding -----

def _rows(seeds: SeedAlignment) -> list[SeedRow]:
    return [(u, v, o) for (u, v), o in zip(seeds.pairs, seeds.origins)]


def _seeds(rows: list[SeedRow]) -> SeedAlignment:
    return SeedAlignment(tuple((u, v) for u, v, _ in rows), tuple(o for _, _, o in rows))


def to_payload(ckpt: Checkpoint) -> dict[str, Any]:
    payload = CheckpointPayload(
        version=ckpt.version,
        config=ckpt.config,
        config_digest=ckpt.config_digest,
        epoch=ckpt.epoch,
        best_epoch=ckpt.best_epoch,
        params={name: ArrayPayload.of(a) for name, a in ckpt.params.items()},
        embeddings=SidesPayload(kg1=ArrayPayload.of(ckpt.embeddings1), kg2=ArrayPayload.of(ckpt.embeddings2)),
        outputs=SidesPayload(kg1=ArrayPayload.of(ckpt.outputs1), kg2=ArrayPayload.of(ckpt.outputs2)),
        entity_ids=EntityIdsPayload(kg1=list(ckpt.entity_ids1), kg2=list(ckpt.entity_ids2)),
        split=SplitPayload(
            fold=ckpt.split.fold,
            train=_rows(ckpt.split.train),
            validation=_rows(ckpt.split.validation),
            test=_rows(ckpt.split.test),
        ),
        seeds=_rows(ckpt.seeds),
        admissions=[AdmissionPayload(**asdict(a)) for a in ckpt.admissions],
        history=[EpochPayload(**rec.as_trace()) for rec in ckpt.history],
        soft_labels=[
            SoftLabelPayload(
                kind=lb.kind,
                r1=lb.r1,
                r2=lb.r2,
                similarity=lb.similarity,
                match_count=lb.match_count,
                support=list(lb.support),
            )
            for lb in ckpt.soft_labels.labels
        ],
    )
    return payload.model_dump(mode="json")


def from_payload(payload: dict[str, Any]) -> Checkpoint:
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})")
    try:
        p = CheckpointPayload.model_validate(payload)
    except ValidationError as exc:
        raise CheckpointError(f"corrupt checkpoint: {validation_message(exc)}") from exc

    labels = tuple(
        SoftLabel(
            kind=lb.kind,
            r1=lb.r1,
            r2=lb.r2,
            similarity=lb.similarity,
            match_count=lb.match_count,
            support=tuple(lb.support),
        )
        for lb in p.soft_labels
    )
    try:
        return Checkpoint(
            config=p.config,
            config_digest=p.config_digest,
            epoch=p.epoch,
            best_epoch=p.best_epoch,
            params={name: a.to_numpy() for name, a in p.params.items()},
            embeddings1=p.embeddings.kg1.to_numpy(),
            embeddings2=p.embeddings.kg2.to_numpy(),
            outputs1=p.outputs.kg1.to_numpy(),
            outputs2=p.outputs.kg2.to_numpy(),
            entity_ids1=tuple(p.entity_ids.kg1),
            entity_ids2=tuple(p.entity_ids.kg2),
            split=DatasetSplit(
                train=_seeds(p.split.train),
                validation=_seeds(p.split.validation),
                test=_seeds(p.split.test),
                fold=p.split.fold,
            ),
            seeds=_seeds(p.seeds),
            admissions=[Admission(**a.model_dump()) for a in p.admissions],
            history=[EpochRecord(**rec.model_dump()) for rec in p.history],
            soft_labels=SoftLabelSet(labels, {lb.r1: lb.r2 for lb in labels}),
            version=p.version,
        )
    except ValueError as exc:
        # seed sets that are not one-to-one
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_payload(ckpt), sort_keys=True, separators=(",", ":"))
    path.write_text(text + "\n", encoding="utf-8")
    logger.info("checkpoint saved path=%s epoch=%d", path, ckpt.epoch)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoint.json"
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise CheckpointError(f"corrupt checkpoint {path}: top level is not an object")
    return from_payload(payload)
