# app/align/relation_text.py
"""Relation-description embedders: trigram hashing by default, precomputed vectors from file."""
from __future__ import annotations

import hashlib
import logging
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np

from app.align.errors import DanglingReferenceError, DimensionError
from app.align.kg import KnowledgeGraph, parse_embeddings
from app.align.numeric import Matrix

logger = logging.getLogger(__name__)


class RelationTextEmbedder(ABC):
    """Deterministic text -> vector map with a fixed output width."""

    dim: int

    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        ...

    def embed_relation(self, relation_id: int, text: str) -> np.ndarray:
        return self.embed(text)


def char_trigrams(text: str) -> set[str]:
    text = " ".join(text.lower().split())
    if not text:
        return set()
    if len(text) < 3:
        return {text}
    return {text[i:i + 3] for i in range(len(text) - 2)}


def trigram_bucket(gram: str, dim: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


class TrigramHashEmbedder(RelationTextEmbedder):
    """Binary bag of character trigrams hashed into `dim` buckets, L2-normalized."""

    def __init__(self, dim: int = 256) -> None:
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for gram in char_trigrams(text):
            vec[trigram_bucket(gram, self.dim)] = 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class RelationVectorFile(RelationTextEmbedder):
    """Externally computed relation vectors, keyed by relation id."""

    def __init__(self, vectors: dict[int, np.ndarray], *, source: str = "") -> None:
        widths = {v.size for v in vectors.values()}
        if len(widths) > 1:
            raise DimensionError(f"relation vectors of mixed width {sorted(widths)}")
        self.vectors = vectors
        self.dim = widths.pop() if widths else 0
        self.source = source

    @classmethod
    def load(cls, path: str | Path) -> "RelationVectorFile":
        return cls(parse_embeddings(path), source=str(path))

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError("relation vectors from file are looked up by relation id")

    def embed_relation(self, relation_id: int, text: str) -> np.ndarray:
        vec = self.vectors.get(relation_id)
        if vec is None:
            raise DanglingReferenceError("relation", [relation_id], path=self.source or None)
        return vec


def embed_relation_text(embedder: RelationTextEmbedder, kg: KnowledgeGraph) -> tuple[Matrix, list[int]]:
    """One row per relation (in `kg.relation_ids` order) plus the ids whose vector is all-zero."""
    rows = []
    empty: list[int] = []
    for rid in kg.relation_ids:
        vec = np.asarray(embedder.embed_relation(rid, kg.relation_description(rid)), dtype=np.float64)
        if vec.shape != (embedder.dim,):
            raise DimensionError(f"relation {rid}: vector shape {vec.shape}, expected ({embedder.dim},)")
        if not np.any(vec):
            empty.append(rid)
        rows.append(vec)
    if empty:
        logger.debug("relation text zero vectors kg=%s relations=%s", kg.name, empty)
    data = np.vstack(rows) if rows else np.zeros((0, embedder.dim))
    return Matrix(data), empty
