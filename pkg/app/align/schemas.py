# app/align/schemas.py
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Mapping

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.align.errors import ConfigError
from app.constants import (
    ATTENTION_EPSILON,
    BETA,
    CANDIDATE_THRESHOLD,
    DECAY_GAMMA,
    DESK_DIM,
    DESK_ENTITY_MATCH_THRESHOLD,
    DESK_ENTITY_SIM_THRESHOLD,
    DESK_EPOCHS,
    DESK_RELATION_MATCH_THRESHOLD,
    ENTITY_MATCH_THRESHOLD,
    ENTITY_SIM_THRESHOLD,
    GAT_LAYERS,
    HIT_KS,
    LEAKY_RELU_SLOPE,
    MARGIN_GAMMA,
    MAX_EPOCHS,
    MAX_SEED_NEIGHBORS,
    N_FOLDS,
    NEGATIVES_K,
    PRUNE_LAMBDA,
    RELATION_MATCH_THRESHOLD,
    RELATION_SIM_THRESHOLD,
    SPLIT_RATIOS,
    WEIGHTED_MARGIN,
)


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    beta: float = Field(default=BETA, gt=0, description="scale of the rank-decayed negative weights")
    decay_gamma: float = Field(default=DECAY_GAMMA, ge=0, description="decay rate of negative weights over rank")
    margin_gamma: float = Field(default=MARGIN_GAMMA, gt=0, description="margin of the bidirectional margin loss")
    weighted_margin: float = Field(default=WEIGHTED_MARGIN, gt=0, description="margin of the weighted hinge loss")
    k: int = Field(default=NEGATIVES_K, ge=1, description="hard negatives mined per positive and direction")
    enable_weighted: bool = Field(default=True, description="include the bidirectional weighted loss")
    enable_margin: bool = Field(default=True, description="include the bidirectional margin loss")
    loss_form: Literal["hinge", "literal"] = Field(
        default="hinge", description="weighted loss as w*max(0, margin - D) or the literal w*D"
    )


class SoftLabelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    use_soft_labels: bool = Field(default=True, description="screen soft labels and prune attention with them")
    entity_sim_threshold: float = Field(default=ENTITY_SIM_THRESHOLD, gt=-1, le=1, description="Sim_e: neighbor-pair cosine")
    entity_match_threshold: int = Field(default=ENTITY_MATCH_THRESHOLD, ge=1, description="Match_e: votes per relation pair")
    relation_sim_threshold: float = Field(default=RELATION_SIM_THRESHOLD, gt=-1, le=1, description="Sim_r: relation-text cosine")
    relation_match_threshold: int = Field(default=RELATION_MATCH_THRESHOLD, ge=1, description="Match_r: candidate pairs per relation pair")
    prune_lambda: float = Field(default=PRUNE_LAMBDA, ge=0, le=1, description="attention multiplier of edges outside the soft-label map")
    max_seed_neighbors: int = Field(default=MAX_SEED_NEIGHBORS, ge=1, description="neighbors enumerated per seed entity")
    relation_text_dim: int = Field(default=256, ge=1, description="buckets of the trigram relation-text embedder")


class ExpansionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    use_expansion: bool = Field(default=True, description="admit mutual-nearest-neighbor pseudo-seeds")
    expansion_interval: int = Field(default=50, ge=1, description="epochs between soft-label refresh and expansion")
    mnn_threshold: float = Field(default=CANDIDATE_THRESHOLD, gt=0, le=1, description="minimum similarity of an admitted pseudo-seed")
    tie_admitted: bool = Field(default=True, description="give both entities of an admitted pseudo-seed one shared embedding row")


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=MAX_EPOCHS, ge=1, le=MAX_EPOCHS, description="training epochs")
    layers: int = Field(default=GAT_LAYERS, ge=1, description="GAT layers")
    dim: int = Field(default=DESK_DIM, ge=1, description="embedding width (must match initial-embedding files)")
    learning_rate: float = Field(default=0.005, gt=0, description="gradient-descent step size")
    momentum: float = Field(default=0.0, ge=0, lt=1, description="heavy-ball momentum, 0 for plain descent")
    grad_clip: float = Field(default=5.0, ge=0, description="global gradient-norm clip, 0 disables")
    loss_reduction: Literal["mean", "sum"] = Field(default="mean", description="reduce the loss over positives")
    candidate_threshold: float = Field(default=CANDIDATE_THRESHOLD, gt=-1, le=1, description="similarity for candidate pairs")
    epsilon: float = Field(default=ATTENTION_EPSILON, gt=0, description="attention temperature")
    leaky_slope: float = Field(default=LEAKY_RELU_SLOPE, ge=0, lt=1, description="negative slope of the attention LeakyReLU")
    use_highway: bool = Field(default=True, description="highway gate between name features and GAT output")
    train_embeddings: bool = Field(default=True, description="update entity embeddings along with encoder parameters")
    update_rows: Literal["seeded", "all"] = Field(
        default="seeded", description="entity rows the optimizer moves: rows of current seed pairs, or every row"
    )
    embedding_init: Literal["anchored", "random"] = Field(
        default="anchored",
        description="initial embeddings when none are given: one shared random row per training pair and zeros "
        "elsewhere, or independent random rows",
    )
    pseudo_weight: float = Field(default=1.0, ge=0, description="loss weight of pseudo-seed positives")
    select: Literal["best", "last"] = Field(default="best", description="keep the best validation epoch or the last one")
    patience: int = Field(default=0, ge=0, description="stop after this many epochs without validation gain, 0 disables")
    log_every: int = Field(default=10, ge=1, description="epochs between progress log lines")
    rng_seed: int = Field(default=0, description="seed for splits and initialization")
    split_ratios: tuple[float, float, float] = Field(default=SPLIT_RATIOS, description="train/validation/test fractions")
    n_folds: int = Field(default=N_FOLDS, ge=1, description="folds the seed order is rotated over")
    ks: tuple[int, ...] = Field(default=HIT_KS, description="Hit@k cutoffs reported")
    loss: LossConfig = Field(default_factory=LossConfig)
    soft_labels: SoftLabelConfig = Field(default_factory=SoftLabelConfig)
    expansion: ExpansionConfig = Field(default_factory=ExpansionConfig)

    @field_validator("split_ratios")
    @classmethod
    def _ratios_sum_to_one(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if min(v) < 0 or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"ratios must be non-negative and sum to 1, got {v}")
        return v

    @field_validator("ks")
    @classmethod
    def _positive_ks(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if not v or min(v) < 1:
            raise ValueError(f"ks must be positive, got {v}")
        return tuple(sorted(set(v)))


# ----- Flattened keys / presets -----

SECTIONS: dict[str, type[BaseModel]] = {
    "loss": LossConfig,
    "soft_labels": SoftLabelConfig,
    "expansion": ExpansionConfig,
}

FLAT_KEYS: dict[str, tuple[str | None, str]] = {
    name: (None, name) for name in TrainConfig.model_fields if name not in SECTIONS
}
for _section, _model in SECTIONS.items():
    for _name in _model.model_fields:
        FLAT_KEYS[_name] = (_section, _name)

PRESETS: dict[str, dict[str, Any]] = {
    "standard": {},
    "desk": {
        "epochs": DESK_EPOCHS,
        "dim": DESK_DIM,
        "soft_labels": {
            "entity_match_threshold": DESK_ENTITY_MATCH_THRESHOLD,
            "relation_match_threshold": DESK_RELATION_MATCH_THRESHOLD,
            "entity_sim_threshold": DESK_ENTITY_SIM_THRESHOLD,
        },
    },
}

ABLATIONS: dict[str, dict[str, Any]] = {
    "bwm": {"loss": {"enable_weighted": False}},
    "softlabels": {"soft_labels": {"use_soft_labels": False}},
}


def unflatten(values: Mapping[str, Any]) -> dict[str, Any]:
    """Accept nested sections or flat field names; return the nested form."""
    out: dict[str, Any] = {}
    for key, value in values.items():
        if key in SECTIONS and isinstance(value, Mapping):
            out.setdefault(key, {}).update(value)
            continue
        if key not in FLAT_KEYS:
            raise ConfigError("unknown configuration key", field=key)
        section, name = FLAT_KEYS[key]
        if section is None:
            out[name] = value
        else:
            out.setdefault(section, {})[name] = value
    return out


def merge(base: Mapping[str, Any], update: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"config file {path} must hold an object")
    return unflatten(data)


def resolve_config(
    preset: str | None = None,
    config_file: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    ablations: tuple[str, ...] | list[str] = (),
) -> TrainConfig:
    """Built-in default < preset < config file < ablation arms < explicit overrides."""
    values: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}", field="preset")
        values = merge(values, PRESETS[preset])
    if config_file is not None:
        values = merge(values, load_config_file(config_file))
    for arm in ablations:
        if arm not in ABLATIONS:
            raise ConfigError(f"unknown ablation {arm!r}; expected one of {sorted(ABLATIONS)}", field="ablate")
        values = merge(values, ABLATIONS[arm])
    if overrides:
        values = merge(values, unflatten({k: v for k, v in overrides.items() if v is not None}))
    return TrainConfig.model_validate(values)


def config_payload(cfg: TrainConfig) -> dict[str, Any]:
    return cfg.model_dump(mode="json")


def config_digest(cfg: TrainConfig) -> str:
    canonical = json.dumps(config_payload(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def validation_message(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err.get("loc", ()))
        parts.append(f"{loc}: {err.get('msg')}")
    return "; ".join(parts)


# ----- Run manifest -----

def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest(BaseModel):
    tool_version: str
    config: dict[str, Any]
    config_digest: str
    rng_seed: int
    fold: int = 0
    preset: str | None = None
    ablations: list[str] = Field(default_factory=list)
    inputs: dict[str, str] = Field(default_factory=dict)

    @classmethod
    def build(
        cls,
        cfg: TrainConfig,
        *,
        tool_version: str,
        fold: int = 0,
        preset: str | None = None,
        ablations: list[str] | tuple[str, ...] = (),
        input_files: Mapping[str, str | Path | None] | None = None,
    ) -> "RunManifest":
        inputs = {}
        for label, p in (input_files or {}).items():
            if p is not None and Path(p).is_file():
                inputs[label] = file_digest(p)
        return cls(
            tool_version=tool_version,
            config=config_payload(cfg),
            config_digest=config_digest(cfg),
            rng_seed=cfg.rng_seed,
            fold=fold,
            preset=preset,
            ablations=list(ablations),
            inputs=dict(sorted(inputs.items())),
        )
