# tests/conftest.py
import os
import tempfile
from pathlib import Path

# registry and data dir go to a throwaway location before app.config is imported
_DATA = tempfile.mkdtemp(prefix="seg-align-tests-")
os.environ.setdefault("SEG_DATA_DIR", _DATA)
os.environ.setdefault("SEG_DATABASE_URL", f"sqlite:///{Path(_DATA, 'runs.db').as_posix()}")
os.environ.setdefault("SEG_RECORD_RUNS", "0")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from app.align.kg import KnowledgeGraph, SeedAlignment  # noqa: E402
from app.align.synthetic import generate_synthetic_pair  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def make_kg(triples, n_entities=None, relations=None, *, offset=0, name=""):
    """Small graph helper: entity ids offset..offset+n-1, relation names 'rel_<id>' unless given."""
    ids = {e for h, _, t in triples for e in (h, t)}
    if n_entities is not None:
        ids |= set(range(offset, offset + n_entities))
    rels = relations if relations is not None else {r: f"rel_{r}" for _, r, _ in triples}
    return KnowledgeGraph(
        entities={e: f"entity_{e}" for e in sorted(ids)},
        relations=dict(rels),
        triples=list(triples),
        name=name,
    )


def random_kg(rng, n_entities, n_relations, n_triples, *, offset=0):
    triples = []
    for _ in range(n_triples):
        h, t = rng.integers(n_entities, size=2)
        triples.append((int(h) + offset, int(rng.integers(n_relations)), int(t) + offset))
    return make_kg(
        triples,
        n_entities=n_entities,
        relations={r: f"rel_{r}" for r in range(n_relations)},
        offset=offset,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mini_dir():
    return FIXTURES / "dbp15k_mini"


@pytest.fixture
def small_pair():
    return generate_synthetic_pair(30, 4, avg_degree=4.0, edge_perturbation=0.0, rng_seed=3, feature_dim=8)


@pytest.fixture
def tiny_pair():
    """Two 4-entity graphs with the same shape; ids 0..3 and 10..13."""
    t1 = [(0, 0, 1), (1, 1, 2), (2, 0, 3), (0, 1, 3)]
    t2 = [(10, 5, 11), (11, 6, 12), (12, 5, 13), (10, 6, 13)]
    kg1 = make_kg(t1, name="kg1")
    kg2 = make_kg(t2, name="kg2")
    seeds = SeedAlignment.of([(0, 10), (1, 11), (2, 12), (3, 13)])
    return kg1, kg2, seeds


def desk_config(**overrides):
    from app.align.schemas import resolve_config

    values = {"epochs": 4, "dim": 8, "k": 5, "expansion_interval": 2, "log_every": 1}
    values.update(overrides)
    return resolve_config("desk", overrides=values)


@pytest.fixture
def short_run(small_pair):
    """Four desk-preset epochs on `small_pair`; returns (pair, split, cfg, checkpoint)."""
    from app.align.kg import split_seeds
    from app.align.trainer import train

    cfg = desk_config()
    split = split_seeds(small_pair.seeds, (0.3, 0.1, 0.6), cfg.rng_seed)
    ckpt = train(small_pair.kg1, small_pair.kg2, split, cfg, small_pair.features1, small_pair.features2)
    return small_pair, split, cfg, ckpt
