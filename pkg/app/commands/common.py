# app/commands/common.py
"""Options and loaders shared by the training commands."""
from __future__ import annotations

import json
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

from app.align.errors import ConfigError
from app.align.kg import (
    INIT_EMB_FILE,
    RELATION_VECTOR_FILE,
    KnowledgeGraph,
    SeedAlignment,
    embedding_matrix,
    load_kg_dir,
    parse_embeddings,
    parse_seeds,
)
from app.align.relation_text import RelationTextEmbedder, RelationVectorFile
from app.align.schemas import FLAT_KEYS, SECTIONS, PRESETS, ABLATIONS, TrainConfig

CFG_PREFIX = "cfg_"

# flags whose field name would read ambiguously on the command line
OPTION_NAMES = {
    "k": "--negatives-k",
    "ks": "--hit-k",
}


# ----- config flags -----

def _field_info(section: str | None, name: str):
    model = TrainConfig if section is None else SECTIONS[section]
    return model.model_fields[name]


def _config_option(flat: str) -> Callable:
    section, name = FLAT_KEYS[flat]
    info = _field_info(section, name)
    default = info.get_default(call_default_factory=True)
    flag = OPTION_NAMES.get(flat, "--" + flat.replace("_", "-"))
    where = f"{section}." if section else ""
    help_text = f"{info.description or flat} ({where}{name}; default: {default})"
    dest = CFG_PREFIX + flat

    ann = info.annotation
    origin = typing.get_origin(ann)
    if ann is bool:
        base = flag[2:]
        return click.option(f"--{base}/--no-{base}", dest, default=None, help=help_text)
    if origin is typing.Literal:
        return click.option(flag, dest, type=click.Choice([str(x) for x in typing.get_args(ann)]), default=None, help=help_text)
    if origin is tuple:
        args = typing.get_args(ann)
        if len(args) == 2 and args[1] is Ellipsis:
            return click.option(flag, dest, type=args[0], multiple=True, help=help_text)
        return click.option(flag, dest, type=args[0], nargs=len(args), default=None, help=help_text)
    return click.option(flag, dest, type=ann, default=None, help=help_text)


def config_options(func: Callable) -> Callable:
    """One flag per configuration field (nested sections flattened); unset flags stay None."""
    for flat in reversed(list(FLAT_KEYS)):
        func = _config_option(flat)(func)
    func = click.option(
        "--ablate",
        type=click.Choice(sorted(ABLATIONS)),
        multiple=True,
        help="Disable a component: bwm (bidirectional weighted loss) or softlabels.",
    )(func)
    func = click.option(
        "--config",
        "config_file",
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        help="Flat JSON (or YAML) object of configuration fields.",
    )(func)
    func = click.option(
        "--preset",
        type=click.Choice(sorted(PRESETS)),
        default=None,
        help="Named defaults: full-scale settings or desk-scale thresholds.",
    )(func)
    return func


def pop_overrides(kwargs: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for key in [k for k in kwargs if k.startswith(CFG_PREFIX)]:
        value = kwargs.pop(key)
        if value is None or value == ():
            continue
        out[key[len(CFG_PREFIX):]] = value
    return out


# ----- data flags -----

def data_options(func: Callable) -> Callable:
    existing_dir = click.Path(exists=True, file_okay=False, path_type=Path)
    existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)
    for decl in reversed([
        click.option("--kg1", "kg1_dir", type=existing_dir, required=True, help="Directory of graph 1 (ent_ids, triples, rel_ids)."),
        click.option("--kg2", "kg2_dir", type=existing_dir, required=True, help="Directory of graph 2."),
        click.option("--seeds", "seeds_file", type=existing_file, required=True, help="Gold links '<kg1 id>\\t<kg2 id>'."),
        click.option("--init-emb1", type=existing_file, default=None, help=f"Initial embeddings of graph 1 (default: <kg1>/{INIT_EMB_FILE} if present)."),
        click.option("--init-emb2", type=existing_file, default=None, help=f"Initial embeddings of graph 2 (default: <kg2>/{INIT_EMB_FILE} if present)."),
        click.option("--rel-vectors1", type=existing_file, default=None, help=f"Relation vectors of graph 1 (default: <kg1>/{RELATION_VECTOR_FILE} if present)."),
        click.option("--rel-vectors2", type=existing_file, default=None, help=f"Relation vectors of graph 2 (default: <kg2>/{RELATION_VECTOR_FILE} if present)."),
    ]):
        func = decl(func)
    return func


@dataclass(frozen=True)
class DataPaths:
    kg1_dir: str
    kg2_dir: str
    seeds_file: str
    init_emb1: str | None = None
    init_emb2: str | None = None
    rel_vectors1: str | None = None
    rel_vectors2: str | None = None

    @classmethod
    def from_kwargs(cls, kwargs: dict[str, Any]) -> "DataPaths":
        def pick(explicit, directory: Path, default_name: str) -> str | None:
            if explicit is not None:
                return str(explicit)
            candidate = Path(directory) / default_name
            return str(candidate) if candidate.is_file() else None

        kg1, kg2 = Path(kwargs.pop("kg1_dir")), Path(kwargs.pop("kg2_dir"))
        return cls(
            kg1_dir=str(kg1),
            kg2_dir=str(kg2),
            seeds_file=str(kwargs.pop("seeds_file")),
            init_emb1=pick(kwargs.pop("init_emb1"), kg1, INIT_EMB_FILE),
            init_emb2=pick(kwargs.pop("init_emb2"), kg2, INIT_EMB_FILE),
            rel_vectors1=pick(kwargs.pop("rel_vectors1"), kg1, RELATION_VECTOR_FILE),
            rel_vectors2=pick(kwargs.pop("rel_vectors2"), kg2, RELATION_VECTOR_FILE),
        )

    def input_files(self) -> dict[str, str | None]:
        kg1, kg2 = Path(self.kg1_dir), Path(self.kg2_dir)
        return {
            "kg1/ent_ids": str(kg1 / "ent_ids"),
            "kg1/rel_ids": str(kg1 / "rel_ids"),
            "kg1/triples": str(kg1 / "triples"),
            "kg2/ent_ids": str(kg2 / "ent_ids"),
            "kg2/rel_ids": str(kg2 / "rel_ids"),
            "kg2/triples": str(kg2 / "triples"),
            "seeds": self.seeds_file,
            "init_emb1": self.init_emb1,
            "init_emb2": self.init_emb2,
            "rel_vectors1": self.rel_vectors1,
            "rel_vectors2": self.rel_vectors2,
        }


@dataclass
class LoadedData:
    kg1: KnowledgeGraph
    kg2: KnowledgeGraph
    seeds: SeedAlignment
    features1: np.ndarray | None
    features2: np.ndarray | None
    relation_embedder1: RelationTextEmbedder | None
    relation_embedder2: RelationTextEmbedder | None


def load_data(paths: DataPaths) -> LoadedData:
    kg1 = load_kg_dir(paths.kg1_dir, name="kg1")
    kg2 = load_kg_dir(paths.kg2_dir, name="kg2")
    seeds = parse_seeds(paths.seeds_file, kg1, kg2)

    if (paths.init_emb1 is None) != (paths.init_emb2 is None):
        raise ConfigError("initial embeddings found for only one graph", field="init_emb")
    f1 = f2 = None
    if paths.init_emb1 is not None:
        f1 = embedding_matrix(parse_embeddings(paths.init_emb1, kg1.entity_ids), kg1.entity_ids)
        f2 = embedding_matrix(parse_embeddings(paths.init_emb2, kg2.entity_ids), kg2.entity_ids)

    r1 = RelationVectorFile.load(paths.rel_vectors1) if paths.rel_vectors1 else None
    r2 = RelationVectorFile.load(paths.rel_vectors2) if paths.rel_vectors2 else None
    if (r1 is None) != (r2 is None):
        raise ConfigError("relation vectors found for only one graph", field="rel_vectors")
    return LoadedData(kg1, kg2, seeds, f1, f2, r1, r2)


def echo_json(payload: Any, out: Path | None = None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)
