# app/align/matcher.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from app.align.errors import DanglingReferenceError, DimensionError
from app.align.kg import Pair, SeedAlignment
from app.align.numeric import Matrix
from app.constants import HIT_KS

logger = logging.getLogger(__name__)


# ----------------------------
# Similarity
# ----------------------------

@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    values: np.ndarray
    row_ids: tuple[int, ...]
    col_ids: tuple[int, ...]
    zero_rows: tuple[int, ...] = ()
    zero_cols: tuple[int, ...] = ()
    row_pos: dict[int, int] = field(init=False, repr=False, compare=False)
    col_pos: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.row_ids), len(self.col_ids)):
            raise DimensionError(
                f"similarity values {self.values.shape} for {len(self.row_ids)} rows / {len(self.col_ids)} cols"
            )
        row_pos = {e: i for i, e in enumerate(self.row_ids)}
        col_pos = {e: j for j, e in enumerate(self.col_ids)}
        if len(row_pos) != len(self.row_ids) or len(col_pos) != len(self.col_ids):
            raise ValueError("row/col id maps must be bijective")
        object.__setattr__(self, "row_pos", row_pos)
        object.__setattr__(self, "col_pos", col_pos)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def score(self, e1: int, e2: int) -> float:
        return float(self.values[self.row_pos[e1], self.col_pos[e2]])

    def col_id_array(self) -> np.ndarray:
        return np.asarray(self.col_ids, dtype=np.int64)

    def row_id_array(self) -> np.ndarray:
        return np.asarray(self.row_ids, dtype=np.int64)


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    zero = norms[:, 0] == 0.0
    return np.where(norms > 0.0, x / np.where(norms > 0.0, norms, 1.0), 0.0), zero


def similarity_matrix(
    emb1: Matrix | np.ndarray,
    emb2: Matrix | np.ndarray,
    row_ids: Sequence[int] | None = None,
    col_ids: Sequence[int] | None = None,
    *,
    block_rows: int | None = None,
) -> SimilarityMatrix:
    """
    Cosine similarity of every row of `emb1` against every row of `emb2`.
    Zero rows score 0 against everything and are reported in zero_rows/zero_cols.
    `block_rows` computes the product in row blocks to bound peak memory.
    """
    a = emb1.data if isinstance(emb1, Matrix) else np.asarray(emb1, dtype=np.float64)
    b = emb2.data if isinstance(emb2, Matrix) else np.asarray(emb2, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"similarity_matrix: {a.shape} vs {b.shape}")
    row_ids = tuple(range(a.shape[0])) if row_ids is None else tuple(int(i) for i in row_ids)
    col_ids = tuple(range(b.shape[0])) if col_ids is None else tuple(int(i) for i in col_ids)

    ua, za = _unit_rows(a)
    ub, zb = _unit_rows(b)
    if block_rows is None or block_rows >= a.shape[0]:
        values = ua @ ub.T
    else:
        values = np.empty((a.shape[0], b.shape[0]))
        for start in range(0, a.shape[0], block_rows):
            values[start:start + block_rows] = ua[start:start + block_rows] @ ub.T
    np.clip(values, -1.0, 1.0, out=values)

    zero_rows = tuple(row_ids[i] for i in np.flatnonzero(za))
    zero_cols = tuple(col_ids[j] for j in np.flatnonzero(zb))
    if zero_rows or zero_cols:
        logger.debug("similarity zero vectors rows=%d cols=%d", len(zero_rows), len(zero_cols))
    values.setflags(write=False)
    return SimilarityMatrix(values, row_ids, col_ids, zero_rows, zero_cols)


# ----------------------------
# Candidates and greedy matching
# ----------------------------

class Candidate(NamedTuple):
    e1: int
    e2: int
    similarity: float


@dataclass(frozen=True)
class CandidateSet:
    items: tuple[Candidate, ...] = ()
    threshold: float = 1.0

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Candidate]:
        return iter(self.items)

    def pairs(self) -> set[Pair]:
        return {(c.e1, c.e2) for c in self.items}


def candidates(sim: SimilarityMatrix, threshold: float) -> CandidateSet:
    if not -1.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (-1, 1], got {threshold}")
    rows, cols = np.nonzero(sim.values >= threshold)
    items = tuple(
        Candidate(sim.row_ids[i], sim.col_ids[j], float(sim.values[i, j])) for i, j in zip(rows, cols)
    )
    return CandidateSet(items, threshold)


def greedy_one_to_one(cands: Iterable[Candidate | tuple[int, int, float]]) -> list[Pair]:
    """Highest similarity first, ties by (e1, e2); accept while both endpoints are free."""
    ordered = sorted((Candidate(*c) for c in cands), key=lambda c: (-c.similarity, c.e1, c.e2))
    used1: set[int] = set()
    used2: set[int] = set()
    out: list[Pair] = []
    for c in ordered:
        if c.e1 in used1 or c.e2 in used2:
            continue
        used1.add(c.e1)
        used2.add(c.e2)
        out.append((c.e1, c.e2))
    return out


# ----------------------------
# Metrics
# ----------------------------

def gold_ranks(sim: SimilarityMatrix, gold: Iterable[Pair]) -> np.ndarray:
    """1-based rank of each true counterpart in its row; ties go to the lower column id."""
    gold = list(gold)
    missing = [u for u, _ in gold if u not in sim.row_pos] + [v for _, v in gold if v not in sim.col_pos]
    if missing:
        raise DanglingReferenceError("gold entity", missing)
    col_ids = sim.col_id_array()
    ranks = np.empty(len(gold), dtype=np.int64)
    for k, (u, v) in enumerate(gold):
        row = sim.values[sim.row_pos[u]]
        s = row[sim.col_pos[v]]
        ranks[k] = 1 + int(np.count_nonzero(row > s)) + int(np.count_nonzero((row == s) & (col_ids < v)))
    return ranks


def evaluate(
    sim: SimilarityMatrix,
    gold: SeedAlignment | Iterable[Pair],
    ks: Sequence[int] = HIT_KS,
    *,
    config_digest: str | None = None,
) -> dict:
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1:
        raise ValueError(f"ks must be positive counts, got {ks}")
    ranks = gold_ranks(sim, gold)
    n = int(ranks.size)
    report: dict = {}
    for k in ks:
        report[f"hit{k}"] = float(np.count_nonzero(ranks <= k) / n) if n else 0.0
    report["mrr"] = float(np.mean(1.0 / ranks)) if n else 0.0
    report["n_test"] = n
    report["config_digest"] = config_digest
    return report
