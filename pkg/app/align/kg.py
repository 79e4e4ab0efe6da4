# app/align/kg.py
"""Knowledge-graph data model, DBP15K-layout files, seed alignments and splits."""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from app.align.errors import DanglingReferenceError, DataFormatError
from app.constants import N_FOLDS

logger = logging.getLogger(__name__)

DESCRIPTION_MARKER = "#comment:"

# Per-graph directory layout (DBP15K naming)
ENTITY_FILE = "ent_ids"
RELATION_FILE = "rel_ids"
TRIPLE_FILE = "triples"
INIT_EMB_FILE = "init_emb.tsv"
RELATION_VECTOR_FILE = "rel_vectors.tsv"
SEED_FILE = "ref_ent_ids"

Triple = tuple[int, int, int]
Pair = tuple[int, int]


class Orientation(str, enum.Enum):
    OUT = "out"
    IN = "in"


class Origin(str, enum.Enum):
    GOLD = "gold"
    PSEUDO = "pseudo"


# ----------------------------
# Knowledge graph
# ----------------------------

@dataclass(eq=False)
class KnowledgeGraph:
    entities: dict[int, str]
    relations: dict[int, str]
    triples: list[Triple]
    name: str = ""
    out_index: dict[int, list[tuple[int, int]]] = field(init=False, repr=False)
    in_index: dict[int, list[tuple[int, int]]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        missing_e = {e for h, _, t in self.triples for e in (h, t) if e not in self.entities}
        if missing_e:
            raise DanglingReferenceError("entity", missing_e)
        missing_r = {r for _, r, _ in self.triples if r not in self.relations}
        if missing_r:
            raise DanglingReferenceError("relation", missing_r)
        self.out_index, self.in_index = build_indexes(self.triples)
        self.entity_ids: tuple[int, ...] = tuple(sorted(self.entities))
        self.relation_ids: tuple[int, ...] = tuple(sorted(self.relations))
        self.entity_pos: dict[int, int] = {e: i for i, e in enumerate(self.entity_ids)}
        self.relation_pos: dict[int, int] = {r: i for i, r in enumerate(self.relation_ids)}

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def neighbors(self, entity: int) -> list[tuple[int, int, Orientation]]:
        """(relation, neighbor, orientation) for every triple touching `entity`."""
        out = [(r, n, Orientation.OUT) for r, n in self.out_index.get(entity, ())]
        out += [(r, n, Orientation.IN) for r, n in self.in_index.get(entity, ())]
        return out

    def relation_description(self, relation: int) -> str:
        name = self.relations[relation]
        if DESCRIPTION_MARKER in name:
            return name.split(DESCRIPTION_MARKER, 1)[1].strip()
        return name

    def head_sets(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {r: set() for r in self.relations}
        for h, r, _ in self.triples:
            out[r].add(h)
        return out

    def tail_sets(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {r: set() for r in self.relations}
        for _, r, t in self.triples:
            out[r].add(t)
        return out

    def content_equals(self, other: "KnowledgeGraph") -> bool:
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and sorted(self.triples) == sorted(other.triples)
        )


def build_indexes(triples: Iterable[Triple]) -> tuple[dict[int, list[tuple[int, int]]], dict[int, list[tuple[int, int]]]]:
    out_index: dict[int, list[tuple[int, int]]] = {}
    in_index: dict[int, list[tuple[int, int]]] = {}
    for h, r, t in triples:
        out_index.setdefault(h, []).append((r, t))
        in_index.setdefault(t, []).append((r, h))
    return out_index, in_index


# ----------------------------
# Seeds / splits
# ----------------------------

@dataclass(frozen=True)
class SeedAlignment:
    pairs: tuple[Pair, ...] = ()
    origins: tuple[Origin, ...] = ()

    def __post_init__(self) -> None:
        if len(self.origins) != len(self.pairs):
            raise ValueError("origins must have one entry per pair")
        left = [u for u, _ in self.pairs]
        right = [v for _, v in self.pairs]
        if len(set(left)) != len(left) or len(set(right)) != len(right):
            raise ValueError("seed alignment must be one-to-one")

    @classmethod
    def of(cls, pairs: Iterable[Pair], origin: Origin = Origin.GOLD) -> "SeedAlignment":
        pairs = tuple((int(u), int(v)) for u, v in pairs)
        return cls(pairs=pairs, origins=tuple(origin for _ in pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[Pair]:
        return iter(self.pairs)

    def gold(self) -> "SeedAlignment":
        return self._only(Origin.GOLD)

    def pseudo(self) -> "SeedAlignment":
        return self._only(Origin.PSEUDO)

    def _only(self, origin: Origin) -> "SeedAlignment":
        keep = [(p, o) for p, o in zip(self.pairs, self.origins) if o is origin]
        return SeedAlignment(tuple(p for p, _ in keep), tuple(o for _, o in keep))

    def extend(self, pairs: Iterable[Pair], origin: Origin) -> "SeedAlignment":
        pairs = tuple((int(u), int(v)) for u, v in pairs)
        return SeedAlignment(self.pairs + pairs, self.origins + tuple(origin for _ in pairs))

    def left(self) -> set[int]:
        return {u for u, _ in self.pairs}

    def right(self) -> set[int]:
        return {v for _, v in self.pairs}

    def validate(self, kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> None:
        bad = [u for u in self.left() if u not in kg1.entities] + [v for v in self.right() if v not in kg2.entities]
        if bad:
            raise DanglingReferenceError("seed entity", bad)


@dataclass(frozen=True)
class DatasetSplit:
    train: SeedAlignment
    validation: SeedAlignment
    test: SeedAlignment
    fold: int = 0


def split_seeds(
    seeds: SeedAlignment,
    ratios: Sequence[float],
    rng_seed: int,
    fold: int = 0,
    n_folds: int = N_FOLDS,
) -> DatasetSplit:
    """
    Shuffle once with `rng_seed`, rotate the shuffled order by fold, then cut
    train/validation/test. With a 1/n_folds train ratio the train parts of the
    folds are disjoint.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {tuple(ratios)}")
    if not 0 <= fold < n_folds:
        raise ValueError(f"fold must lie in [0, {n_folds}), got {fold}")
    n = len(seeds)
    if n < n_folds:
        raise ValueError(f"need at least {n_folds} seeds for {n_folds} folds, got {n}")

    order = np.random.default_rng(rng_seed).permutation(n)
    order = np.roll(order, -(fold * n // n_folds))
    n_train = int(math.floor(ratios[0] * n + 0.5))
    n_val = min(n - n_train, int(math.floor(ratios[1] * n + 0.5)))

    def part(idx: np.ndarray) -> SeedAlignment:
        return SeedAlignment(
            tuple(seeds.pairs[i] for i in idx),
            tuple(seeds.origins[i] for i in idx),
        )

    return DatasetSplit(
        train=part(order[:n_train]),
        validation=part(order[n_train:n_train + n_val]),
        test=part(order[n_train + n_val:]),
        fold=fold,
    )


# ----------------------------
# Parsing
# ----------------------------

def _data_lines(path: Path) -> Iterator[tuple[int, list[str]]]:
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if line.startswith("#"):
                logger.debug("skip comment path=%s line=%d", path, lineno)
                continue
            yield lineno, line.split("\t")


def _uint(text: str, path: Path, lineno: int) -> int:
    text = text.strip()
    if not (text.isascii() and text.isdigit()):
        raise DataFormatError(f"expected a non-negative integer, got {text!r}", path=path, line=lineno)
    return int(text)


def _parse_id_names(path: Path, kind: str) -> dict[int, str]:
    out: dict[int, str] = {}
    for lineno, fields in _data_lines(path):
        if len(fields) < 2:
            raise DataFormatError(f"expected '<id>\\t<{kind} name>'", path=path, line=lineno)
        ident = _uint(fields[0], path, lineno)
        if ident in out:
            raise DataFormatError(f"duplicate {kind} id {ident}", path=path, line=lineno)
        out[ident] = "\t".join(fields[1:])
    return out


def parse_kg(
    entity_file: str | Path,
    triple_file: str | Path,
    relation_file: str | Path | None = None,
    *,
    name: str = "",
) -> KnowledgeGraph:
    entity_file, triple_file = Path(entity_file), Path(triple_file)
    entities = _parse_id_names(entity_file, "entity")
    relations = _parse_id_names(Path(relation_file), "relation") if relation_file is not None else {}

    triples: list[Triple] = []
    dangling_e: set[int] = set()
    dangling_r: set[int] = set()
    for lineno, fields in _data_lines(triple_file):
        if len(fields) != 3:
            raise DataFormatError("expected '<head>\\t<relation>\\t<tail>'", path=triple_file, line=lineno)
        h, r, t = (_uint(x, triple_file, lineno) for x in fields)
        dangling_e.update(e for e in (h, t) if e not in entities)
        if relation_file is None:
            relations.setdefault(r, f"rel_{r}")
        elif r not in relations:
            dangling_r.add(r)
        triples.append((h, r, t))

    if dangling_e:
        raise DanglingReferenceError("entity", dangling_e, path=triple_file)
    if dangling_r:
        raise DanglingReferenceError("relation", dangling_r, path=triple_file)

    kg = KnowledgeGraph(entities=entities, relations=relations, triples=triples, name=name)
    logger.info(
        "parsed kg name=%s entities=%d relations=%d triples=%d",
        name or entity_file.parent.name, kg.num_entities, kg.num_relations, len(triples),
    )
    return kg


def load_kg_dir(directory: str | Path, *, name: str | None = None) -> KnowledgeGraph:
    directory = Path(directory)
    rel = directory / RELATION_FILE
    return parse_kg(
        directory / ENTITY_FILE,
        directory / TRIPLE_FILE,
        rel if rel.exists() else None,
        name=name or directory.name,
    )


def parse_seeds(
    path: str | Path,
    kg1: KnowledgeGraph | None = None,
    kg2: KnowledgeGraph | None = None,
    origin: Origin = Origin.GOLD,
) -> SeedAlignment:
    path = Path(path)
    pairs: list[Pair] = []
    seen1: set[int] = set()
    seen2: set[int] = set()
    for lineno, fields in _data_lines(path):
        if len(fields) != 2:
            raise DataFormatError("expected '<kg1 id>\\t<kg2 id>'", path=path, line=lineno)
        u, v = _uint(fields[0], path, lineno), _uint(fields[1], path, lineno)
        if u in seen1 or v in seen2:
            raise DataFormatError(f"seed pair ({u}, {v}) breaks one-to-one alignment", path=path, line=lineno)
        seen1.add(u)
        seen2.add(v)
        pairs.append((u, v))
    seeds = SeedAlignment.of(pairs, origin)
    if kg1 is not None and kg2 is not None:
        bad = [u for u in seen1 if u not in kg1.entities] + [v for v in seen2 if v not in kg2.entities]
        if bad:
            raise DanglingReferenceError("seed entity", bad, path=path)
    logger.info("parsed seeds path=%s pairs=%d", path, len(seeds))
    return seeds


def parse_embeddings(path: str | Path, ids: Sequence[int] | None = None) -> dict[int, np.ndarray]:
    """`<id>\\t<float>(,<float>)*` rows; when `ids` is given every id must be present."""
    path = Path(path)
    out: dict[int, np.ndarray] = {}
    dim: int | None = None
    for lineno, fields in _data_lines(path):
        if len(fields) != 2:
            raise DataFormatError("expected '<id>\\t<float>,<float>,...'", path=path, line=lineno)
        ident = _uint(fields[0], path, lineno)
        try:
            vec = np.array([float(x) for x in fields[1].split(",")], dtype=np.float64)
        except ValueError as exc:
            raise DataFormatError(f"bad float vector ({exc})", path=path, line=lineno) from exc
        if not np.isfinite(vec).all():
            raise DataFormatError("non-finite value in vector", path=path, line=lineno)
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DataFormatError(f"vector width {vec.size} differs from {dim}", path=path, line=lineno)
        out[ident] = vec
    if ids is not None:
        missing = [i for i in ids if i not in out]
        if missing:
            raise DanglingReferenceError("vector row", missing, path=path)
    return out


def embedding_matrix(vectors: Mapping[int, np.ndarray], ids: Sequence[int]) -> np.ndarray:
    missing = [i for i in ids if i not in vectors]
    if missing:
        raise DanglingReferenceError("vector row", missing)
    return np.vstack([vectors[i] for i in ids])


# ----------------------------
# Serialization
# ----------------------------

def _write_lines(path: Path, lines: Iterable[str]) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def write_kg(kg: KnowledgeGraph, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_lines(directory / ENTITY_FILE, (f"{e}\t{kg.entities[e]}" for e in kg.entity_ids))
    _write_lines(directory / RELATION_FILE, (f"{r}\t{kg.relations[r]}" for r in kg.relation_ids))
    _write_lines(directory / TRIPLE_FILE, (f"{h}\t{r}\t{t}" for h, r, t in kg.triples))
    return directory


def write_seeds(seeds: SeedAlignment, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_lines(path, (f"{u}\t{v}" for u, v in seeds.pairs))
    return path


def write_embeddings(matrix: np.ndarray, ids: Sequence[int], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_lines(path, (f"{i}\t" + ",".join(repr(float(x)) for x in row) for i, row in zip(ids, matrix)))
    return path


def write_manifest(payload: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
