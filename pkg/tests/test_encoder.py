# tests/test_encoder.py
import numpy as np
import pytest

from app.align.encoder import (
    EncoderParams,
    attention_scores,
    encode,
    gat_forward,
    graph_layout,
    highway_combine,
)
from app.align.encoder import relation_repr
from app.align.errors import DimensionError
from app.align.numeric import Matrix
from conftest import make_kg, random_kg


def _random_params(dim, layers, rng):
    params = EncoderParams.initial(dim, layers, rng)
    arrays = {k: v + rng.normal(0.0, 0.3, size=v.shape) for k, v in params.arrays().items()}
    return EncoderParams.from_arrays(arrays, epsilon=1.3, slope=0.05)


def _leaky(x, slope):
    return x if x > 0 else slope * x


def _oracle_forward(kg, h0, p):
    """Layer-by-layer scalar evaluation of the encoder with plain loops."""
    pos = kg.entity_pos
    h = np.array(h0, dtype=float)
    b = p.relation_attention.data[0]
    for layer in range(p.layers):
        a = p.attention[layer].data[:, 0]
        rel = {}
        for r in kg.relation_ids:
            heads = sorted({x for x, rr, _ in kg.triples if rr == r})
            tails = sorted({y for _, rr, y in kg.triples if rr == r})
            hm = np.mean([b * h[pos[x]] for x in heads], axis=0) if heads else np.zeros(len(b))
            tm = np.mean([b * h[pos[y]] for y in tails], axis=0) if tails else np.zeros(len(b))
            rel[r] = np.maximum(np.concatenate([hm, tm]), 0.0)
        n = kg.num_entities
        score = np.zeros((n, n))
        mask = np.zeros((n, n), dtype=bool)
        for x, r, y in kg.triples:
            term = _leaky(float(a @ (np.concatenate([h[pos[x]], h[pos[y]]]) * rel[r])), p.slope)
            score[pos[x], pos[y]] += term
            mask[pos[x], pos[y]] = True
            if x != y:
                score[pos[y], pos[x]] += term
                mask[pos[y], pos[x]] = True
        att = np.zeros((n, n))
        for i in range(n):
            js = [j for j in range(n) if mask[i, j]]
            if not js:
                continue
            ex = [np.exp(p.epsilon * score[i, j]) for j in js]
            for j, e in zip(js, ex):
                att[i, j] = e / sum(ex)
        agg = att @ h
        h = h + p.gates[layer].data[0, 0] * np.maximum(agg, 0.0)
    return h @ p.out_weight.data + p.out_bias.data


class TestRelationRepr:
    def test_three_triple_relation(self):
        kg = make_kg([(0, 0, 1), (2, 0, 1), (0, 0, 3), (3, 1, 2)], n_entities=4)
        h = Matrix([[1.0, -1.0], [2.0, 0.0], [3.0, 1.0], [-4.0, 2.0]])
        b = Matrix([[1.0, 0.5]])
        rel, empty = relation_repr(kg, h, b)
        # relation 0: heads {0, 2}, tails {1, 3}
        head = (np.array([1.0, -0.5]) + np.array([3.0, 0.5])) / 2
        tail = (np.array([2.0, 0.0]) + np.array([-4.0, 1.0])) / 2
        np.testing.assert_allclose(rel.data[0], np.maximum(np.concatenate([head, tail]), 0.0))
        assert empty == ()

    def test_relation_without_triples_is_flagged(self):
        kg = make_kg([(0, 0, 1)], relations={0: "r", 1: "unused"})
        rel, empty = relation_repr(kg, Matrix(np.ones((2, 2))), Matrix(np.ones((1, 2))))
        assert empty == (1,)
        np.testing.assert_array_equal(rel.data[1], np.zeros(4))


class TestAttentionScores:
    def test_two_relations_between_a_pair_add_up(self, rng):
        kg = make_kg([(0, 0, 1), (1, 1, 0)], n_entities=3)
        h = Matrix(rng.normal(size=(3, 2)))
        b = Matrix([[1.0, 1.0]])
        a = Matrix(rng.normal(size=(4, 1)))
        rel, _ = relation_repr(kg, h, b)
        att = attention_scores(kg, h, rel, a, 0.01)
        hd = h.data
        t0 = _leaky(float(a.data[:, 0] @ (np.concatenate([hd[0], hd[1]]) * rel.data[0])), 0.01)
        t1 = _leaky(float(a.data[:, 0] @ (np.concatenate([hd[1], hd[0]]) * rel.data[1])), 0.01)
        assert att.scores.data[0, 1] == pytest.approx(t0 + t1)
        assert att.scores.data[1, 0] == pytest.approx(t0 + t1)
        assert not att.mask[0, 2] and not att.mask[2, 2]

    def test_self_loop_counted_once(self):
        kg = make_kg([(0, 0, 0)])
        h = Matrix([[1.0, 2.0]])
        rel, _ = relation_repr(kg, h, Matrix([[1.0, 1.0]]))
        a = Matrix(np.ones((4, 1)))
        att = attention_scores(kg, h, rel, a, 0.01)
        expected = float(np.ones(4) @ (np.array([1.0, 2.0, 1.0, 2.0]) * rel.data[0]))
        assert att.scores.data[0, 0] == pytest.approx(expected)


class TestGatForward:
    def test_path_graph_against_scalar_oracle(self, rng):
        kg = make_kg([(0, 0, 1), (1, 1, 2), (2, 0, 3), (3, 1, 4)], n_entities=5)
        params = _random_params(2, 2, rng)
        h0 = rng.normal(size=(5, 2))
        out = gat_forward(kg, Matrix(h0), params)
        np.testing.assert_allclose(out.data, _oracle_forward(kg, h0, params), rtol=0, atol=1e-12)

    def test_isolated_entity_passes_through(self, rng):
        kg = make_kg([(0, 0, 1)], n_entities=3)
        params = _random_params(2, 1, rng)
        h0 = rng.normal(size=(3, 2))
        log = []
        out = gat_forward(kg, Matrix(h0), params, attention_log=log)
        np.testing.assert_array_equal(log[0][2], np.zeros(3))
        expected = h0[2] @ params.out_weight.data + params.out_bias.data[0]
        np.testing.assert_allclose(out.data[2], expected)
        assert graph_layout(kg).isolated == (2,)

    def test_attention_rows_normalized_on_random_graphs(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            n = int(rng.integers(2, 51))
            kg = random_kg(rng, n, int(rng.integers(1, 6)), int(rng.integers(1, 3 * n)))
            params = _random_params(4, 2, rng)
            log = []
            gat_forward(kg, Matrix(rng.normal(size=(n, 4))), params, attention_log=log)
            assert len(log) == 2
            for weights in log:
                sums = weights.sum(axis=1)
                nonempty = graph_layout(kg).mask.any(axis=1)
                np.testing.assert_allclose(sums[nonempty], 1.0, atol=1e-6)
                assert np.all(sums[~nonempty] == 0.0)

    def test_zero_gates_identity_projection_return_input(self, rng):
        kg = random_kg(rng, 15, 3, 40)
        params = EncoderParams.initial(5, 2, rng, gate=0.0)
        np.testing.assert_array_equal(params.out_weight.data, np.eye(5))
        h0 = rng.normal(size=(15, 5))
        out = gat_forward(kg, Matrix(h0), params)
        np.testing.assert_allclose(out.data, h0, rtol=1e-15, atol=0)

    def test_relabeling_entities_permutes_rows(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            n = int(rng.integers(3, 25))
            kg = random_kg(rng, n, 3, 2 * n)
            perm = rng.permutation(n)
            relabeled = make_kg(
                [(int(perm[h]), r, int(perm[t])) for h, r, t in kg.triples],
                n_entities=n,
                relations=kg.relations,
            )
            params = _random_params(4, 2, rng)
            h0 = rng.normal(size=(n, 4))
            h0_relabeled = np.empty_like(h0)
            h0_relabeled[perm] = h0
            out = encode(kg, Matrix(h0), params).data
            out_relabeled = encode(relabeled, Matrix(h0_relabeled), params).data
            np.testing.assert_allclose(out_relabeled[perm], out, rtol=0, atol=1e-10)

    def test_plain_arrays_are_accepted(self, rng):
        kg = random_kg(rng, 8, 2, 12)
        params = _random_params(3, 1, rng)
        h0 = rng.normal(size=(8, 3))
        np.testing.assert_array_equal(encode(kg, h0, params).data, encode(kg, Matrix(h0), params).data)
        np.testing.assert_array_equal(gat_forward(kg, h0, params).data, gat_forward(kg, Matrix(h0), params).data)

    def test_row_count_checked(self, rng):
        kg = make_kg([(0, 0, 1)])
        with pytest.raises(ValueError):
            gat_forward(kg, Matrix(np.ones((3, 2))), EncoderParams.initial(2, 1, rng))


class TestPruning:
    def test_unit_multipliers_are_bit_identical(self, rng):
        kg = random_kg(rng, 12, 3, 30)
        params = _random_params(3, 2, rng)
        h0 = Matrix(rng.normal(size=(12, 3)))
        plain = encode(kg, h0, params)
        pruned = encode(kg, h0, params, edge_weights=np.ones(len(kg.triples)))
        np.testing.assert_array_equal(plain.data, pruned.data)

    def test_zero_multiplier_drops_neighbor(self, rng):
        kg = make_kg([(0, 0, 1), (0, 1, 2)], n_entities=3)
        params = _random_params(2, 1, rng)
        h0 = Matrix(rng.normal(size=(3, 2)))
        log = []
        gat_forward(kg, h0, params, edge_weights=np.array([1.0, 0.0]), attention_log=log)
        assert log[0][0, 2] == 0.0
        assert log[0][0, 1] == pytest.approx(1.0)
        # entity 2 keeps no support at all
        np.testing.assert_array_equal(log[0][2], np.zeros(3))


class TestHighway:
    def test_zero_gate_weights_give_mean(self, rng):
        x, y = Matrix(rng.normal(size=(3, 4))), Matrix(rng.normal(size=(3, 4)))
        out = highway_combine(x, y, Matrix.zeros(4, 4), Matrix.zeros(1, 4))
        np.testing.assert_allclose(out.data, 0.5 * (x.data + y.data))

    @pytest.mark.parametrize("bias, pick", [(1e3, "neighborhood"), (-1e3, "name")])
    def test_saturated_bias_selects_one_input(self, rng, bias, pick):
        name, neighborhood = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        out = highway_combine(name, neighborhood, Matrix(rng.normal(size=(3, 3))), Matrix(np.full((1, 3), bias)))
        expected = neighborhood if pick == "neighborhood" else name
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            highway_combine(Matrix(np.ones((2, 3))), Matrix(np.ones((3, 3))), Matrix.zeros(3, 3), Matrix.zeros(1, 3))

    def test_encode_without_highway_is_gat_output(self, rng):
        kg = random_kg(rng, 6, 2, 8)
        params = _random_params(3, 1, rng)
        h0 = Matrix(rng.normal(size=(6, 3)))
        np.testing.assert_array_equal(encode(kg, h0, params, use_highway=False).data, gat_forward(kg, h0, params).data)


class TestEncoderParams:
    def test_arrays_round_trip(self, rng):
        params = _random_params(3, 2, rng)
        again = EncoderParams.from_arrays(params.arrays(), epsilon=params.epsilon, slope=params.slope)
        assert again.layers == 2 and again.dim == 3
        for name, arr in params.arrays().items():
            np.testing.assert_array_equal(again.arrays()[name], arr)

    def test_shape_validation(self, rng):
        arrays = EncoderParams.initial(3, 1, rng).arrays()
        arrays["out_weight"] = np.ones((2, 2))
        with pytest.raises(ValueError):
            EncoderParams.from_arrays(arrays)

    def test_layout_is_cached(self, tiny_pair):
        kg1, _, _ = tiny_pair
        assert graph_layout(kg1) is graph_layout(kg1)
