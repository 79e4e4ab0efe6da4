# tests/test_gradients.py
import time

import numpy as np

from app.align.encoder import EncoderParams, encode
from app.align.kg import SeedAlignment
from app.align.loss import EmbeddingPair, mine_negatives, total_loss
from app.align.matcher import similarity_matrix
from app.align.numeric import check_gradients
from app.align.schemas import LossConfig
from conftest import random_kg

ENTITY_KEYS = ("ent1", "ent2")


def _loss_fn(kg1, kg2, positives, negatives, cfg, edge_weights=(None, None)):
    def f(p):
        params = EncoderParams.from_arrays({k: v for k, v in p.items() if k not in ENTITY_KEYS})
        out1 = encode(kg1, p["ent1"], params, edge_weights=edge_weights[0])
        out2 = encode(kg2, p["ent2"], params, edge_weights=edge_weights[1])
        pair = EmbeddingPair(out1, out2, kg1.entity_pos, kg2.entity_pos)
        return total_loss(pair, positives, negatives, cfg)

    return f


def _instance(seed, n=20, dim=8, layers=2):
    rng = np.random.default_rng(seed)
    kg1 = random_kg(rng, n, 4, 40)
    kg2 = random_kg(rng, n, 4, 40, offset=100)
    base = EncoderParams.initial(dim, layers, rng)
    values = {k: v + rng.normal(0.0, 0.2, size=v.shape) for k, v in base.arrays().items()}
    values["ent1"] = rng.normal(size=(n, dim))
    values["ent2"] = rng.normal(size=(n, dim))
    positives = SeedAlignment.of((i, 100 + i) for i in range(6))
    return kg1, kg2, values, positives


class TestTotalLossGradient:
    def test_matches_finite_differences(self):
        kg1, kg2, values, positives = _instance(7)
        cfg = LossConfig(k=3)
        params = EncoderParams.from_arrays({k: v for k, v in values.items() if k not in ENTITY_KEYS})
        out1 = encode(kg1, values["ent1"], params)
        out2 = encode(kg2, values["ent2"], params)
        # negatives are mined once and held fixed, as within one training step
        negatives = mine_negatives(similarity_matrix(out1, out2, kg1.entity_ids, kg2.entity_ids), positives, cfg.k)

        started = time.perf_counter()
        report = check_gradients(_loss_fn(kg1, kg2, positives, negatives, cfg), values, step=1e-5, tol=1e-4)
        assert time.perf_counter() - started < 30.0
        assert not report.failures
        assert set(report.max_rel_error) == set(values)
        assert report.worst <= 1e-4, report.max_rel_error

    def test_with_pruned_edges(self):
        kg1, kg2, values, positives = _instance(11, n=10, dim=4, layers=1)
        rng = np.random.default_rng(3)
        weights = (
            np.where(rng.random(len(kg1.triples)) < 0.5, 0.5, 1.0),
            np.where(rng.random(len(kg2.triples)) < 0.5, 0.5, 1.0),
        )
        cfg = LossConfig(k=2, loss_form="literal")
        params = EncoderParams.from_arrays({k: v for k, v in values.items() if k not in ENTITY_KEYS})
        out1 = encode(kg1, values["ent1"], params, edge_weights=weights[0])
        out2 = encode(kg2, values["ent2"], params, edge_weights=weights[1])
        negatives = mine_negatives(similarity_matrix(out1, out2, kg1.entity_ids, kg2.entity_ids), positives, cfg.k)
        report = check_gradients(_loss_fn(kg1, kg2, positives, negatives, cfg, weights), values)
        assert report.ok, report.max_rel_error
