# app/align/loss.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from app.align.errors import ConfigError
from app.align.kg import Pair, SeedAlignment
from app.align.matcher import SimilarityMatrix
from app.align.numeric import Matrix, add, gather_rows, l1_distance, mul, relu, sub, sum_all
from app.align.schemas import LossConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NegativeBatch:
    positives: tuple[Pair, ...]
    right: tuple[tuple[int, ...], ...]  # KG2 negatives for each positive's KG1 anchor
    left: tuple[tuple[int, ...], ...]   # KG1 negatives for each positive's KG2 anchor
    k: int

    def __len__(self) -> int:
        return len(self.positives)


@dataclass(frozen=True)
class EmbeddingPair:
    """Final embeddings of both graphs with id -> row lookups."""

    emb1: Matrix
    emb2: Matrix
    pos1: Mapping[int, int]
    pos2: Mapping[int, int]


def _ranked(scores: np.ndarray, ids: np.ndarray, exclude: int, k: int) -> tuple[int, ...]:
    order = np.lexsort((ids, -scores))
    out = []
    for idx in order:
        e = int(ids[idx])
        if e == exclude:
            continue
        out.append(e)
        if len(out) == k:
            break
    return tuple(out)


def mine_negatives(sim: SimilarityMatrix, positives: SeedAlignment | Iterable[Pair], k: int) -> NegativeBatch:
    """Top-k most similar non-counterparts per positive, from each side; ties by lower id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    positives = tuple((int(u), int(v)) for u, v in positives)
    row_ids, col_ids = sim.row_id_array(), sim.col_id_array()
    right, left = [], []
    for u, v in positives:
        right.append(_ranked(sim.values[sim.row_pos[u]], col_ids, v, k))
        left.append(_ranked(sim.values[:, sim.col_pos[v]], row_ids, u, k))
    return NegativeBatch(positives, tuple(right), tuple(left), k)


def decay_weights(k: int, beta: float, gamma: float) -> np.ndarray:
    """w_j = beta * exp(-gamma * (j - 1) / (k - 1)) for j = 1..k; a single negative gets beta."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        return np.array([float(beta)])
    j = np.arange(k, dtype=np.float64)
    return beta * np.exp(-gamma * j / (k - 1))


@dataclass
class _Entries:
    """One row per (positive, ranked negative) in a single corruption direction."""

    us: list[int] = field(default_factory=list)
    vs: list[int] = field(default_factory=list)
    negs: list[int] = field(default_factory=list)
    ranks: list[int] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)

    def add(self, u: int, v: int, neg: int, rank: int, weight: float) -> None:
        self.us.append(u)
        self.vs.append(v)
        self.negs.append(neg)
        self.ranks.append(rank)
        self.weights.append(weight)


def _entries(negatives: NegativeBatch, pair_weights: Sequence[float] | None) -> tuple[_Entries, _Entries]:
    """(KG2-side negatives of KG1 anchors, KG1-side negatives of KG2 anchors)."""
    right, left = _Entries(), _Entries()
    for p, (u, v) in enumerate(negatives.positives):
        w = 1.0 if pair_weights is None else float(pair_weights[p])
        for rank, neg in enumerate(negatives.right[p]):
            right.add(u, v, neg, rank, w)
        for rank, neg in enumerate(negatives.left[p]):
            left.add(u, v, neg, rank, w)
    return right, left


def _check_positives(positives, negatives: NegativeBatch) -> None:
    if tuple((int(u), int(v)) for u, v in positives) != negatives.positives:
        raise ValueError("negative batch was mined for a different positive list")


def _zero() -> Matrix:
    return Matrix.zeros(1, 1)


def _column(values: Iterable[float]) -> Matrix:
    return Matrix._wrap(np.asarray(list(values), dtype=np.float64).reshape(-1, 1))


def weighted_loss(
    embeddings: EmbeddingPair,
    positives: SeedAlignment | Iterable[Pair],
    negatives: NegativeBatch,
    cfg: LossConfig,
    *,
    pair_weights: Sequence[float] | None = None,
) -> Matrix:
    """
    Sum over positives, both directions, of w_j * max(0, weighted_margin - D_ij)
    (or w_j * D_ij with loss_form="literal"); D is the L1 distance between the
    anchor and its j-th ranked negative.
    """
    _check_positives(positives, negatives)
    w = decay_weights(cfg.k, cfg.beta, cfg.decay_gamma)
    e = embeddings
    right, left = _entries(negatives, pair_weights)
    total = None
    for side, entries in ((1, right), (2, left)):
        if not entries.negs:
            continue
        if side == 1:
            anchor = gather_rows(e.emb1, [e.pos1[u] for u in entries.us])
            other = gather_rows(e.emb2, [e.pos2[n] for n in entries.negs])
        else:
            anchor = gather_rows(e.emb2, [e.pos2[v] for v in entries.vs])
            other = gather_rows(e.emb1, [e.pos1[n] for n in entries.negs])
        dist = l1_distance(anchor, other)
        term = dist if cfg.loss_form == "literal" else relu(sub(cfg.weighted_margin, dist))
        coeff = _column(w[r] * p for r, p in zip(entries.ranks, entries.weights))
        part = sum_all(mul(term, coeff))
        total = part if total is None else add(total, part)
    return total if total is not None else _zero()


def margin_loss(
    embeddings: EmbeddingPair,
    positives: SeedAlignment | Iterable[Pair],
    negatives: NegativeBatch,
    cfg: LossConfig,
    *,
    pair_weights: Sequence[float] | None = None,
) -> Matrix:
    """[D(e1, e2) + margin - D(e1, e2')]_+ + [D(e1, e2) + margin - D(e1', e2)]_+ with L1 distance D."""
    _check_positives(positives, negatives)
    e = embeddings
    right, left = _entries(negatives, pair_weights)
    total = None
    for corrupt, entries in ((2, right), (1, left)):
        if not entries.negs:
            continue
        rows1 = [e.pos1[u] for u in entries.us]
        rows2 = [e.pos2[v] for v in entries.vs]
        positive = l1_distance(gather_rows(e.emb1, rows1), gather_rows(e.emb2, rows2))
        if corrupt == 2:
            negative = l1_distance(gather_rows(e.emb1, rows1), gather_rows(e.emb2, [e.pos2[n] for n in entries.negs]))
        else:
            negative = l1_distance(gather_rows(e.emb1, [e.pos1[n] for n in entries.negs]), gather_rows(e.emb2, rows2))
        hinge = relu(add(sub(positive, negative), cfg.margin_gamma))
        if pair_weights is not None:
            hinge = mul(hinge, _column(entries.weights))
        part = sum_all(hinge)
        total = part if total is None else add(total, part)
    return total if total is not None else _zero()


def check_switches(cfg: LossConfig) -> None:
    if not (cfg.enable_weighted or cfg.enable_margin):
        raise ConfigError("at least one of enable_weighted / enable_margin must be on", field="enable_weighted")


def total_loss(
    embeddings: EmbeddingPair,
    positives: SeedAlignment | Iterable[Pair],
    negatives: NegativeBatch,
    cfg: LossConfig,
    *,
    pair_weights: Sequence[float] | None = None,
) -> Matrix:
    check_switches(cfg)
    total = None
    if cfg.enable_weighted:
        total = weighted_loss(embeddings, positives, negatives, cfg, pair_weights=pair_weights)
    if cfg.enable_margin:
        m = margin_loss(embeddings, positives, negatives, cfg, pair_weights=pair_weights)
        total = m if total is None else add(total, m)
    return total
