# app/align/soft_labels.py
"""
Soft labels: screened relation correspondences between the two graphs.

Entity mode anchors on seed pairs and looks for highly similar neighbor pairs;
the relations connecting a seed to its matched neighbors vote for a relation
pair. Relation mode compares relation descriptions and counts how many
candidate entity pairs instantiate a relation pair. Fusion keeps relation mode
on conflict. The fused map then scales attention terms in the encoder.
"""
from __future__ import annotations

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from app.align.kg import KnowledgeGraph, Orientation, Pair, SeedAlignment
from app.align.matcher import Candidate, CandidateSet, greedy_one_to_one
from app.align.numeric import Matrix
from app.constants import MAX_SEED_NEIGHBORS

logger = logging.getLogger(__name__)


class LabelKind(str, enum.Enum):
    ENTITY_MODE = "entity_mode"
    RELATION_MODE = "relation_mode"


@dataclass(frozen=True)
class SoftLabel:
    kind: LabelKind
    r1: int
    r2: int
    similarity: float
    match_count: int
    support: tuple[Pair, ...] = ()  # neighbor entity pairs behind an entity-mode label


@dataclass(frozen=True)
class SoftLabelSet:
    labels: tuple[SoftLabel, ...] = ()
    mapping: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def split(self) -> tuple[list[SoftLabel], list[SoftLabel]]:
        entity = [lb for lb in self.labels if lb.kind is LabelKind.ENTITY_MODE]
        relation = [lb for lb in self.labels if lb.kind is LabelKind.RELATION_MODE]
        return entity, relation

    def relations1(self) -> set[int]:
        return set(self.mapping)

    def relations2(self) -> set[int]:
        return set(self.mapping.values())


def _rows(emb: Matrix | np.ndarray) -> np.ndarray:
    data = emb.data if isinstance(emb, Matrix) else np.asarray(emb, dtype=np.float64)
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    return np.where(norms > 0.0, data / np.where(norms > 0.0, norms, 1.0), 0.0)


def _relations_between(kg: KnowledgeGraph, entity: int, neighbor: int) -> dict[Orientation, set[int]]:
    out: dict[Orientation, set[int]] = {Orientation.OUT: set(), Orientation.IN: set()}
    for r, n, orient in kg.neighbors(entity):
        if n == neighbor:
            out[orient].add(r)
    return out


# ----------------------------
# Entity mode
# ----------------------------

def entity_mode_labels(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    emb1: Matrix | np.ndarray,
    emb2: Matrix | np.ndarray,
    seeds: SeedAlignment | Iterable[Pair],
    sim_threshold: float,
    match_threshold: int,
    *,
    max_seed_neighbors: int = MAX_SEED_NEIGHBORS,
) -> list[SoftLabel]:
    """
    For every seed pair, match neighbor entities one-to-one by cosine (>= sim_threshold)
    and let each matched neighbor pair vote for the orientation-consistent relation pairs
    linking it to the seed. Votes are counted over all seeds.
    """
    unit1, unit2 = _rows(emb1), _rows(emb2)
    votes: dict[tuple[int, int], list[tuple[float, Pair]]] = defaultdict(list)

    for a, b in sorted(seeds):
        nb1 = sorted({n for _, n, _ in kg1.neighbors(a)})[:max_seed_neighbors]
        nb2 = sorted({n for _, n, _ in kg2.neighbors(b)})[:max_seed_neighbors]
        if not nb1 or not nb2:
            continue
        rows = unit1[[kg1.entity_pos[n] for n in nb1]]
        cols = unit2[[kg2.entity_pos[n] for n in nb2]]
        sims = np.clip(rows @ cols.T, -1.0, 1.0)
        hits = np.argwhere(sims >= sim_threshold)
        cands = [Candidate(nb1[i], nb2[j], float(sims[i, j])) for i, j in hits]
        score = {(c.e1, c.e2): c.similarity for c in cands}
        for x, y in greedy_one_to_one(cands):
            rel1 = _relations_between(kg1, a, x)
            rel2 = _relations_between(kg2, b, y)
            for orient in (Orientation.OUT, Orientation.IN):
                for r1 in rel1[orient]:
                    for r2 in rel2[orient]:
                        votes[(r1, r2)].append((score[(x, y)], (x, y)))

    labels = []
    for (r1, r2), hits in votes.items():
        if len(hits) < match_threshold:
            continue
        labels.append(
            SoftLabel(
                kind=LabelKind.ENTITY_MODE,
                r1=r1,
                r2=r2,
                similarity=float(np.mean([s for s, _ in hits])),
                match_count=len(hits),
                support=tuple(sorted(p for _, p in hits)),
            )
        )
    labels.sort(key=lambda lb: (-lb.match_count, -lb.similarity, lb.r1, lb.r2))
    logger.debug("entity-mode labels=%d voted_pairs=%d", len(labels), len(votes))
    return labels


# ----------------------------
# Relation mode
# ----------------------------

def relation_cooccurrence(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    candidate_pairs: Iterable[Pair],
    anchors: set[Pair],
) -> dict[tuple[int, int], int]:
    """
    Match_r: for each candidate pair (u, v), every relation pair (r1, r2) such that
    u -r1- u' and v -r2- v' share an orientation and (u', v') is an anchor pair.
    A candidate pair counts a relation pair at most once.
    """
    counts: dict[tuple[int, int], int] = defaultdict(int)
    for u, v in sorted(set(candidate_pairs)):
        found: set[tuple[int, int]] = set()
        nb2 = kg2.neighbors(v)
        for r1, u2, o1 in kg1.neighbors(u):
            for r2, v2, o2 in nb2:
                if o1 is o2 and (u2, v2) in anchors:
                    found.add((r1, r2))
        for key in found:
            counts[key] += 1
    return dict(counts)


def relation_mode_labels(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    rel_text_emb1: Matrix | np.ndarray,
    rel_text_emb2: Matrix | np.ndarray,
    cands: CandidateSet | Iterable[Pair],
    sim_threshold: float,
    match_threshold: int,
    *,
    seeds: SeedAlignment | Iterable[Pair] = (),
) -> list[SoftLabel]:
    """Relation pairs with description cosine >= sim_threshold and Match_r >= match_threshold, one-to-one."""
    if isinstance(cands, CandidateSet):
        pairs = cands.pairs()
    else:
        pairs = {(int(u), int(v)) for u, v, *_ in cands}
    anchors = pairs | {(int(u), int(v)) for u, v in seeds}
    counts = relation_cooccurrence(kg1, kg2, pairs, anchors)

    unit1, unit2 = _rows(rel_text_emb1), _rows(rel_text_emb2)
    eligible = []
    for (r1, r2), count in counts.items():
        if count < match_threshold:
            continue
        sim = float(np.clip(unit1[kg1.relation_pos[r1]] @ unit2[kg2.relation_pos[r2]], -1.0, 1.0))
        if sim >= sim_threshold:
            eligible.append((r1, r2, sim, count))

    eligible.sort(key=lambda x: (-x[2], -x[3], x[0], x[1]))
    used1: set[int] = set()
    used2: set[int] = set()
    labels = []
    for r1, r2, sim, count in eligible:
        if r1 in used1 or r2 in used2:
            continue
        used1.add(r1)
        used2.add(r2)
        labels.append(SoftLabel(LabelKind.RELATION_MODE, r1, r2, sim, count))
    logger.debug("relation-mode labels=%d counted_pairs=%d", len(labels), len(counts))
    return labels


# ----------------------------
# Fusion and pruning
# ----------------------------

def _priority(label: SoftLabel) -> tuple:
    return (-label.match_count, -label.similarity, label.r1, label.r2)


def fuse(entity_labels: Sequence[SoftLabel], relation_labels: Sequence[SoftLabel]) -> SoftLabelSet:
    """Relation-mode labels first (by similarity), then entity-mode by vote count; one-to-one over relations."""
    ordered = sorted(relation_labels, key=lambda lb: (-lb.similarity, -lb.match_count, lb.r1, lb.r2))
    ordered += sorted(entity_labels, key=_priority)
    kept: list[SoftLabel] = []
    mapping: dict[int, int] = {}
    used2: set[int] = set()
    for label in ordered:
        if label.r1 in mapping or label.r2 in used2:
            continue
        mapping[label.r1] = label.r2
        used2.add(label.r2)
        kept.append(label)
    return SoftLabelSet(tuple(kept), mapping)


def pruning_weights(
    softlabels: SoftLabelSet,
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    prune_lambda: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-triple attention multipliers: 1.0 for relations in the fused map, `prune_lambda` otherwise."""
    if not 0.0 <= prune_lambda <= 1.0:
        raise ValueError(f"prune_lambda must lie in [0, 1], got {prune_lambda}")
    if not softlabels.mapping:
        return np.ones(len(kg1.triples)), np.ones(len(kg2.triples))
    keep1, keep2 = softlabels.relations1(), softlabels.relations2()
    w1 = np.array([1.0 if r in keep1 else prune_lambda for _, r, _ in kg1.triples])
    w2 = np.array([1.0 if r in keep2 else prune_lambda for _, r, _ in kg2.triples])
    return w1, w2


def write_soft_label_audit(softlabels: SoftLabelSet | Iterable[SoftLabel], path: str | Path) -> Path:
    path = Path(path)
    labels = softlabels.labels if isinstance(softlabels, SoftLabelSet) else tuple(softlabels)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for lb in labels:
            fh.write(f"{lb.kind.value}\t{lb.r1}\t{lb.r2}\t{lb.similarity!r}\t{lb.match_count}\n")
    return path
