# tests/test_soft_labels.py
from collections import defaultdict

import numpy as np
import pytest

from app.align.matcher import CandidateSet, Candidate, candidates, similarity_matrix
from app.align.relation_text import TrigramHashEmbedder, embed_relation_text
from app.align.soft_labels import (
    LabelKind,
    SoftLabel,
    SoftLabelSet,
    entity_mode_labels,
    fuse,
    pruning_weights,
    relation_cooccurrence,
    relation_mode_labels,
    write_soft_label_audit,
)
from app.align.synthetic import generate_synthetic_pair
from conftest import make_kg


def _star_pair():
    """Seed 0 <-> 10; neighbors 1..3 <-> 11..13 via relation 0 <-> 5 (out) and one reversed edge."""
    kg1 = make_kg([(0, 0, 1), (0, 0, 2), (0, 0, 3), (4, 1, 0)], n_entities=5)
    kg2 = make_kg([(10, 5, 11), (10, 5, 12), (13, 5, 10), (14, 6, 10)], n_entities=5, offset=10)
    emb = np.eye(5)
    return kg1, kg2, emb, emb.copy()


def _count_oracle(kg1, kg2, pairs, anchors):
    counts = defaultdict(int)
    for u, v in pairs:
        found = set()
        for h1, r1, t1 in kg1.triples:
            for h2, r2, t2 in kg2.triples:
                if h1 == u and h2 == v and (t1, t2) in anchors:
                    found.add((r1, r2))
                if t1 == u and t2 == v and (h1, h2) in anchors:
                    found.add((r1, r2))
        for key in found:
            counts[key] += 1
    return dict(counts)


class TestEntityMode:
    def test_votes_need_matching_orientation(self):
        kg1, kg2, emb1, emb2 = _star_pair()
        labels = entity_mode_labels(kg1, kg2, emb1, emb2, [(0, 10)], 0.9, 2)
        # 1->11 and 2->12 are out/out; 3 vs 13 is out/in and does not vote
        assert [(lb.r1, lb.r2, lb.match_count) for lb in labels] == [(0, 5, 2)]
        assert labels[0].kind is LabelKind.ENTITY_MODE
        assert labels[0].similarity == pytest.approx(1.0)
        assert labels[0].support == ((1, 11), (2, 12))

    def test_in_orientation_votes(self):
        kg1, kg2, emb1, emb2 = _star_pair()
        labels = entity_mode_labels(kg1, kg2, emb1, emb2, [(0, 10)], 0.9, 1)
        assert (1, 6) in {(lb.r1, lb.r2) for lb in labels}

    def test_similarity_threshold(self):
        kg1, kg2, emb1, _ = _star_pair()
        labels = entity_mode_labels(kg1, kg2, emb1, -emb1, [(0, 10)], 0.9, 1)
        assert labels == []

    def test_neighbor_cap(self):
        kg1, kg2, emb1, emb2 = _star_pair()
        labels = entity_mode_labels(kg1, kg2, emb1, emb2, [(0, 10)], 0.9, 2, max_seed_neighbors=1)
        assert labels == []

    def test_seed_order_does_not_matter(self):
        rng = np.random.default_rng(5)
        for seed in range(10):
            pair = generate_synthetic_pair(30, 4, 4.0, 0.1, rng_seed=seed, feature_dim=8)
            seeds = list(pair.seeds.pairs[:12])
            base = entity_mode_labels(pair.kg1, pair.kg2, pair.features1, pair.features2, seeds, 0.8, 2)
            shuffled = [seeds[int(i)] for i in rng.permutation(len(seeds))]
            again = entity_mode_labels(pair.kg1, pair.kg2, pair.features1, pair.features2, shuffled, 0.8, 2)
            assert again == base

class TestRelationMode:
    def test_cooccurrence_matches_brute_force(self, rng):
        pair = generate_synthetic_pair(40, 5, 4.0, 0.1, rng_seed=12)
        kg1, kg2 = pair.kg1, pair.kg2
        all_pairs = list(pair.seeds.pairs)
        picked = [all_pairs[i] for i in rng.choice(len(all_pairs), size=25, replace=False)]
        anchors = set(picked) | set(all_pairs[:5])
        assert relation_cooccurrence(kg1, kg2, picked, anchors) == _count_oracle(kg1, kg2, picked, anchors)

    def test_thresholds_and_one_to_one(self):
        pair = generate_synthetic_pair(60, 5, 5.0, 0.05, rename=True, rng_seed=3)
        kg1, kg2 = pair.kg1, pair.kg2
        cands = CandidateSet(tuple(Candidate(u, v, 1.0) for u, v in pair.seeds.pairs), 0.95)
        t1, _ = embed_relation_text(TrigramHashEmbedder(256), kg1)
        t2, _ = embed_relation_text(TrigramHashEmbedder(256), kg2)
        labels = relation_mode_labels(kg1, kg2, t1, t2, cands, 0.5, 5)
        counts = _count_oracle(kg1, kg2, cands.pairs(), cands.pairs())
        assert labels
        assert len({lb.r1 for lb in labels}) == len(labels) == len({lb.r2 for lb in labels})
        for lb in labels:
            assert lb.kind is LabelKind.RELATION_MODE
            assert lb.match_count == counts[(lb.r1, lb.r2)] >= 5
            assert lb.similarity >= 0.5

    def test_seeds_act_as_anchors(self):
        kg1 = make_kg([(0, 0, 1)])
        kg2 = make_kg([(10, 5, 11)])
        text = np.ones((1, 3))
        without = relation_mode_labels(kg1, kg2, text, text, [(0, 10)], 0.5, 1)
        with_seed = relation_mode_labels(kg1, kg2, text, text, [(0, 10)], 0.5, 1, seeds=[(1, 11)])
        assert without == []
        assert [(lb.r1, lb.r2) for lb in with_seed] == [(0, 5)]


class TestFuse:
    def test_relation_mode_wins_conflicts(self):
        ent = [
            SoftLabel(LabelKind.ENTITY_MODE, 1, 10, 0.99, 50),
            SoftLabel(LabelKind.ENTITY_MODE, 2, 11, 0.95, 40),
            SoftLabel(LabelKind.ENTITY_MODE, 3, 12, 0.97, 30),
        ]
        rel = [SoftLabel(LabelKind.RELATION_MODE, 1, 11, 0.98, 700)]
        fused = fuse(ent, rel)
        # (1, 11) blocks (1, 10) by r1 and (2, 11) by r2
        assert fused.mapping == {1: 11, 3: 12}
        assert [lb.kind for lb in fused.labels] == [LabelKind.RELATION_MODE, LabelKind.ENTITY_MODE]

    def test_entity_mode_priority_is_count_then_similarity(self):
        ent = [
            SoftLabel(LabelKind.ENTITY_MODE, 1, 10, 0.99, 5),
            SoftLabel(LabelKind.ENTITY_MODE, 2, 10, 0.91, 9),
        ]
        assert fuse(ent, []).mapping == {2: 10}

    def test_split_and_sides(self):
        fused = fuse([SoftLabel(LabelKind.ENTITY_MODE, 4, 14, 0.9, 3)], [SoftLabel(LabelKind.RELATION_MODE, 1, 11, 0.99, 9)])
        ent, rel = fused.split()
        assert len(ent) == len(rel) == 1
        assert fused.relations1() == {1, 4} and fused.relations2() == {11, 14}

    def test_properties_on_random_pairs(self):
        emb = TrigramHashEmbedder(128)
        for seed in range(50):
            pair = generate_synthetic_pair(30, 4, 4.0, 0.1, rng_seed=seed, feature_dim=8)
            kg1, kg2 = pair.kg1, pair.kg2
            seeds = pair.seeds.pairs[:10]
            ent = entity_mode_labels(kg1, kg2, pair.features1, pair.features2, seeds, 0.8, 2)
            sim = similarity_matrix(pair.features1, pair.features2, kg1.entity_ids, kg2.entity_ids)
            t1, _ = embed_relation_text(emb, kg1)
            t2, _ = embed_relation_text(emb, kg2)
            rel = relation_mode_labels(kg1, kg2, t1, t2, candidates(sim, 0.9), 0.9, 2, seeds=seeds)
            # inject a conflicting entity-mode label for every relation-mode label
            injected = [
                SoftLabel(LabelKind.ENTITY_MODE, lb.r1, r2, 1.0, 10_000)
                for lb in rel
                for r2 in kg2.relation_ids
                if r2 != lb.r2
            ][:3]
            fused = fuse(ent + injected, rel)
            assert len(set(fused.mapping.values())) == len(fused.mapping)
            for lb in fused.labels:
                if lb.kind is LabelKind.RELATION_MODE:
                    assert lb.similarity >= 0.9 and lb.match_count >= 2
                else:
                    assert lb.match_count >= 2
                    assert lb in injected or lb.similarity >= 0.8
            for lb in rel:
                assert fused.mapping[lb.r1] == lb.r2


class TestPruningWeights:
    def test_multipliers(self, tiny_pair):
        kg1, kg2, _ = tiny_pair
        labels = fuse([], [SoftLabel(LabelKind.RELATION_MODE, 0, 5, 0.99, 3)])
        w1, w2 = pruning_weights(labels, kg1, kg2, 0.25)
        np.testing.assert_array_equal(w1, [1.0 if r == 0 else 0.25 for _, r, _ in kg1.triples])
        np.testing.assert_array_equal(w2, [1.0 if r == 5 else 0.25 for _, r, _ in kg2.triples])

    def test_empty_map_is_identity(self, tiny_pair):
        kg1, kg2, _ = tiny_pair
        w1, w2 = pruning_weights(SoftLabelSet(), kg1, kg2, 0.0)
        assert w1.tolist() == [1.0] * len(kg1.triples)
        assert w2.tolist() == [1.0] * len(kg2.triples)

    def test_lambda_range(self, tiny_pair):
        kg1, kg2, _ = tiny_pair
        with pytest.raises(ValueError):
            pruning_weights(SoftLabelSet(), kg1, kg2, 1.5)


def test_audit_file(tmp_path):
    fused = fuse([SoftLabel(LabelKind.ENTITY_MODE, 4, 14, 0.5, 3)], [SoftLabel(LabelKind.RELATION_MODE, 1, 11, 0.25, 9)])
    path = write_soft_label_audit(fused, tmp_path / "soft_labels.tsv")
    assert path.read_text().splitlines() == ["relation_mode\t1\t11\t0.25\t9", "entity_mode\t4\t14\t0.5\t3"]
