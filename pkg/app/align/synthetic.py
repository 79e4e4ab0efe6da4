# app/align/synthetic.py
"""Desk-scale stand-in for DBP15K: a random graph, a perturbed isomorphic copy, and noisy name features."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.align.kg import (
    INIT_EMB_FILE,
    SEED_FILE,
    KnowledgeGraph,
    Origin,
    SeedAlignment,
    Triple,
    write_embeddings,
    write_kg,
    write_manifest,
    write_seeds,
)

logger = logging.getLogger(__name__)

RENAME_SUFFIX = " (translated)"
MAX_REWIRE_ATTEMPTS = 32


@dataclass(frozen=True)
class SyntheticParams:
    n_entities: int
    n_relations: int
    avg_degree: float = 6.0
    edge_perturbation: float = 0.05
    rename: bool = False
    rng_seed: int = 0
    feature_dim: int = 32
    feature_noise: float = 0.2

    def validate(self) -> None:
        if self.n_entities < 4:
            raise ValueError(f"n_entities must be >= 4, got {self.n_entities}")
        if self.n_relations < 1:
            raise ValueError(f"n_relations must be >= 1, got {self.n_relations}")
        if self.avg_degree <= 0 or self.avg_degree > self.n_entities - 1:
            raise ValueError(f"avg_degree must lie in (0, n_entities - 1], got {self.avg_degree}")
        if not 0.0 <= self.edge_perturbation <= 0.5:
            raise ValueError(f"edge_perturbation must lie in [0, 0.5], got {self.edge_perturbation}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.feature_noise < 0:
            raise ValueError(f"feature_noise must be >= 0, got {self.feature_noise}")


@dataclass(frozen=True)
class SyntheticPair:
    kg1: KnowledgeGraph
    kg2: KnowledgeGraph
    seeds: SeedAlignment
    features1: np.ndarray
    features2: np.ndarray
    params: SyntheticParams
    n_dropped: int = 0
    n_rewired: int = 0

    def __iter__(self):
        # unpacks as (kg1, kg2, seeds)
        return iter((self.kg1, self.kg2, self.seeds))


def generate_synthetic_pair(
    n_entities: int,
    n_relations: int,
    avg_degree: float = 6.0,
    edge_perturbation: float = 0.05,
    rename: bool = False,
    rng_seed: int = 0,
    *,
    feature_dim: int = 32,
    feature_noise: float = 0.2,
) -> SyntheticPair:
    params = SyntheticParams(
        n_entities=n_entities,
        n_relations=n_relations,
        avg_degree=avg_degree,
        edge_perturbation=edge_perturbation,
        rename=rename,
        rng_seed=rng_seed,
        feature_dim=feature_dim,
        feature_noise=feature_noise,
    )
    params.validate()
    rng = np.random.default_rng(rng_seed)

    # --- KG1: uniform random multi-relational graph without self-loops ---
    n_triples = max(1, int(round(n_entities * avg_degree / 2.0)))
    n_triples = min(n_triples, n_entities * (n_entities - 1) * n_relations)
    triples1: list[Triple] = []
    seen: set[Triple] = set()
    while len(triples1) < n_triples:
        h, t = (int(x) for x in rng.choice(n_entities, size=2, replace=False))
        r = int(rng.integers(n_relations))
        if (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        triples1.append((h, r, t))

    entities1 = {e: f"entity_{e:05d}" for e in range(n_entities)}
    relations1 = {r: f"relation_{r:03d}" for r in range(n_relations)}
    kg1 = KnowledgeGraph(entities1, relations1, triples1, name="kg1")

    # --- KG2: fresh ids, same structure, then perturbed ---
    ent_perm = rng.permutation(n_entities)
    rel_perm = rng.permutation(n_relations)
    ent_map = {e: n_entities + int(ent_perm[e]) for e in range(n_entities)}
    rel_map = {r: n_relations + int(rel_perm[r]) for r in range(n_relations)}

    entities2 = {ent_map[e]: name for e, name in entities1.items()}
    relations2 = {
        rel_map[r]: (name + RENAME_SUFFIX if rename else name) for r, name in relations1.items()
    }

    kept: list[Triple] = []
    rewire: list[Triple] = []
    n_dropped = 0
    for h, r, t in triples1:
        mapped = (ent_map[h], rel_map[r], ent_map[t])
        if rng.random() < edge_perturbation:
            if rng.random() < 0.5:
                n_dropped += 1
                continue
            rewire.append(mapped)
            continue
        kept.append(mapped)

    present = set(kept)
    n_rewired = 0
    ids2 = np.array(sorted(entities2), dtype=np.int64)
    for h, r, t in rewire:
        placed = False
        for _ in range(MAX_REWIRE_ATTEMPTS):
            new_t = int(rng.choice(ids2))
            cand = (h, r, new_t)
            if new_t != h and new_t != t and cand not in present:
                present.add(cand)
                kept.append(cand)
                placed = True
                n_rewired += 1
                break
        if not placed:
            n_dropped += 1
    kg2 = KnowledgeGraph(entities2, relations2, kept, name="kg2")

    seeds = SeedAlignment.of(((e, ent_map[e]) for e in range(n_entities)), Origin.GOLD)

    # --- name features: shared latent vector per entity plus per-side noise ---
    scale = 1.0 / np.sqrt(feature_dim)
    latent = rng.normal(0.0, scale, size=(n_entities, feature_dim))
    noise1 = rng.normal(0.0, scale * feature_noise, size=latent.shape)
    noise2 = rng.normal(0.0, scale * feature_noise, size=latent.shape)
    features1 = latent + noise1
    features2 = np.empty_like(latent)
    for e in range(n_entities):
        features2[kg2.entity_pos[ent_map[e]]] = latent[e] + noise2[e]

    logger.info(
        "synthetic pair entities=%d relations=%d triples1=%d triples2=%d dropped=%d rewired=%d",
        n_entities, n_relations, len(triples1), len(kept), n_dropped, n_rewired,
    )
    return SyntheticPair(kg1, kg2, seeds, features1, features2, params, n_dropped, n_rewired)


def write_synthetic(pair: SyntheticPair, out_dir: str | Path) -> Path:
    """Write the pair in the per-graph DBP15K layout plus manifest.json."""
    out_dir = Path(out_dir)
    for kg, feats, sub in ((pair.kg1, pair.features1, "kg1"), (pair.kg2, pair.features2, "kg2")):
        d = write_kg(kg, out_dir / sub)
        write_embeddings(feats, kg.entity_ids, d / INIT_EMB_FILE)
    write_seeds(pair.seeds, out_dir / SEED_FILE)
    p = pair.params
    write_manifest(
        {
            "kg1": {"entities": pair.kg1.num_entities, "relations": pair.kg1.num_relations, "triples": len(pair.kg1.triples)},
            "kg2": {"entities": pair.kg2.num_entities, "relations": pair.kg2.num_relations, "triples": len(pair.kg2.triples)},
            "seeds": len(pair.seeds),
            "rng_seed": p.rng_seed,
            "params": {
                "n_entities": p.n_entities,
                "n_relations": p.n_relations,
                "avg_degree": p.avg_degree,
                "edge_perturbation": p.edge_perturbation,
                "rename": p.rename,
                "feature_dim": p.feature_dim,
                "feature_noise": p.feature_noise,
            },
            "dropped": pair.n_dropped,
            "rewired": pair.n_rewired,
        },
        out_dir / "manifest.json",
    )
    return out_dir
