# app/align/encoder.py
"""
Relation-aware graph attention encoder.

Per layer: relation representations from mean head/tail embeddings, per-triple
attention terms, masked softmax over each entity's neighborhood (both triple
orientations), gated residual aggregation. Then a linear output projection and
an optional highway gate against the input (name) features.
"""
from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from app.align.errors import DimensionError
from app.align.kg import KnowledgeGraph
from app.align.numeric import (
    GradTape,
    Matrix,
    add,
    as_matrix,
    concat_cols,
    gather_rows,
    leaky_relu,
    matmul,
    mul,
    relu,
    rowwise_softmax_scaled,
    scatter_add,
    sigmoid,
    sub,
)
from app.constants import ATTENTION_EPSILON, LEAKY_RELU_SLOPE

logger = logging.getLogger(__name__)


# ----------------------------
# Graph layout (precomputed per graph)
# ----------------------------

@dataclass(frozen=True)
class GraphLayout:
    n_entities: int
    n_relations: int
    heads: np.ndarray          # per triple, entity row
    tails: np.ndarray          # per triple, entity row
    rels: np.ndarray           # per triple, relation row
    head_mean: np.ndarray      # (n_relations, n_entities) averaging operator over distinct heads
    tail_mean: np.ndarray      # (n_relations, n_entities) averaging operator over distinct tails
    empty_relations: tuple[int, ...]
    edge_term: np.ndarray      # directed attention edge -> triple index
    edge_row: np.ndarray
    edge_col: np.ndarray
    mask: np.ndarray           # (n_entities, n_entities) neighbor support
    isolated: tuple[int, ...]  # entity rows without neighbors


_LAYOUTS: "weakref.WeakKeyDictionary[KnowledgeGraph, GraphLayout]" = weakref.WeakKeyDictionary()


def graph_layout(kg: KnowledgeGraph) -> GraphLayout:
    layout = _LAYOUTS.get(kg)
    if layout is None:
        layout = _build_layout(kg)
        _LAYOUTS[kg] = layout
    return layout


def _build_layout(kg: KnowledgeGraph) -> GraphLayout:
    n, m = kg.num_entities, kg.num_relations
    heads = np.array([kg.entity_pos[h] for h, _, _ in kg.triples], dtype=np.int64)
    tails = np.array([kg.entity_pos[t] for _, _, t in kg.triples], dtype=np.int64)
    rels = np.array([kg.relation_pos[r] for _, r, _ in kg.triples], dtype=np.int64)

    head_mean = np.zeros((m, n))
    tail_mean = np.zeros((m, n))
    if len(kg.triples):
        head_mean[rels, heads] = 1.0
        tail_mean[rels, tails] = 1.0
    head_counts = head_mean.sum(axis=1, keepdims=True)
    tail_counts = tail_mean.sum(axis=1, keepdims=True)
    head_mean = np.where(head_counts > 0, head_mean / np.where(head_counts > 0, head_counts, 1.0), 0.0)
    tail_mean = np.where(tail_counts > 0, tail_mean / np.where(tail_counts > 0, tail_counts, 1.0), 0.0)
    empty = tuple(int(kg.relation_ids[i]) for i in np.flatnonzero(head_counts[:, 0] == 0))
    if empty:
        logger.debug("relations without triples kg=%s relations=%s", kg.name, empty)

    # each triple feeds its term to row=head/col=tail and, unless a self-loop, row=tail/col=head
    forward = np.arange(len(kg.triples), dtype=np.int64)
    reverse = forward[heads != tails]
    edge_term = np.concatenate([forward, reverse])
    edge_row = np.concatenate([heads, tails[reverse]])
    edge_col = np.concatenate([tails, heads[reverse]])

    mask = np.zeros((n, n), dtype=bool)
    mask[edge_row, edge_col] = True
    isolated = tuple(int(i) for i in np.flatnonzero(~mask.any(axis=1)))

    return GraphLayout(
        n_entities=n,
        n_relations=m,
        heads=heads,
        tails=tails,
        rels=rels,
        head_mean=head_mean,
        tail_mean=tail_mean,
        empty_relations=empty,
        edge_term=edge_term,
        edge_row=edge_row,
        edge_col=edge_col,
        mask=mask,
        isolated=isolated,
    )


# ----------------------------
# Parameters
# ----------------------------

@dataclass(frozen=True)
class EncoderParams:
    gates: tuple[Matrix, ...]        # d^(l), 1x1 each
    attention: tuple[Matrix, ...]    # a^(l), (2*dim)x1 each
    relation_attention: Matrix       # b, 1xdim
    out_weight: Matrix               # W^n, dim x dim
    out_bias: Matrix                 # b^n, 1 x dim
    highway_weight: Matrix           # W_h, dim x dim
    highway_bias: Matrix             # b_h, 1 x dim
    epsilon: float = ATTENTION_EPSILON
    slope: float = LEAKY_RELU_SLOPE

    def __post_init__(self) -> None:
        if len(self.gates) < 1 or len(self.gates) != len(self.attention):
            raise ValueError("need one gate and one attention vector per layer (at least one layer)")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        dim = self.dim
        for a in self.attention:
            if a.shape != (2 * dim, 1):
                raise ValueError(f"attention vector shape {a.shape}, expected {(2 * dim, 1)}")
        for name, m, shape in (
            ("relation_attention", self.relation_attention, (1, dim)),
            ("out_weight", self.out_weight, (dim, dim)),
            ("out_bias", self.out_bias, (1, dim)),
            ("highway_weight", self.highway_weight, (dim, dim)),
            ("highway_bias", self.highway_bias, (1, dim)),
        ):
            if m.shape != shape:
                raise ValueError(f"{name} shape {m.shape}, expected {shape}")

    @property
    def dim(self) -> int:
        return self.relation_attention.cols

    @property
    def layers(self) -> int:
        return len(self.gates)

    @classmethod
    def initial(
        cls,
        dim: int,
        layers: int,
        rng: np.random.Generator,
        *,
        epsilon: float = ATTENTION_EPSILON,
        slope: float = LEAKY_RELU_SLOPE,
        gate: float = 0.1,
        attention_scale: float = 0.1,
    ) -> "EncoderParams":
        return cls(
            gates=tuple(Matrix([[gate]]) for _ in range(layers)),
            attention=tuple(Matrix(rng.normal(0.0, attention_scale, size=(2 * dim, 1))) for _ in range(layers)),
            relation_attention=Matrix(np.ones((1, dim))),
            out_weight=Matrix.identity(dim),
            out_bias=Matrix.zeros(1, dim),
            highway_weight=Matrix.zeros(dim, dim),
            highway_bias=Matrix.zeros(1, dim),
            epsilon=epsilon,
            slope=slope,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"gate_{i}": g.data for i, g in enumerate(self.gates)}
        out.update({f"attention_{i}": a.data for i, a in enumerate(self.attention)})
        out.update(
            relation_attention=self.relation_attention.data,
            out_weight=self.out_weight.data,
            out_bias=self.out_bias.data,
            highway_weight=self.highway_weight.data,
            highway_bias=self.highway_bias.data,
        )
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping, *, epsilon: float = ATTENTION_EPSILON, slope: float = LEAKY_RELU_SLOPE) -> "EncoderParams":
        """Build from a name -> array/Matrix mapping (tracked matrices stay tracked)."""
        def get(name: str) -> Matrix:
            v = arrays[name]
            return v if isinstance(v, Matrix) else Matrix(v)

        layers = sum(1 for k in arrays if k.startswith("gate_"))
        return cls(
            gates=tuple(get(f"gate_{i}") for i in range(layers)),
            attention=tuple(get(f"attention_{i}") for i in range(layers)),
            relation_attention=get("relation_attention"),
            out_weight=get("out_weight"),
            out_bias=get("out_bias"),
            highway_weight=get("highway_weight"),
            highway_bias=get("highway_bias"),
            epsilon=epsilon,
            slope=slope,
        )

    def watch(self, tape: GradTape, prefix: str = "") -> "EncoderParams":
        tracked = {name: tape.watch(prefix + name, arr) for name, arr in self.arrays().items()}
        return EncoderParams.from_arrays(tracked, epsilon=self.epsilon, slope=self.slope)

    def with_hyper(self, *, epsilon: float | None = None, slope: float | None = None) -> "EncoderParams":
        return replace(
            self,
            epsilon=self.epsilon if epsilon is None else epsilon,
            slope=self.slope if slope is None else slope,
        )


# ----------------------------
# Forward pieces
# ----------------------------

def _layout(kg: KnowledgeGraph | GraphLayout) -> GraphLayout:
    return kg if isinstance(kg, GraphLayout) else graph_layout(kg)


def relation_repr(kg: KnowledgeGraph | GraphLayout, entity_emb: Matrix, b: Matrix) -> tuple[Matrix, tuple[int, ...]]:
    """
    R_t = ReLU([mean_{h in heads(t)} b*H_h || mean_{w in tails(t)} b*H_w]).
    Returns one row per relation (width 2*dim) and the ids of relations without
    triples, whose rows are zero.
    """
    layout = _layout(kg)
    scaled = mul(entity_emb, b)
    head = matmul(Matrix._wrap(layout.head_mean), scaled)
    tail = matmul(Matrix._wrap(layout.tail_mean), scaled)
    return relu(concat_cols(head, tail)), layout.empty_relations


@dataclass(frozen=True)
class AttentionScores:
    scores: Matrix           # dense S (n x n); zero where masked
    mask: np.ndarray         # neighbor support
    mass: np.ndarray | None  # per-neighbor softmax mass after pruning


def attention_scores(
    kg: KnowledgeGraph | GraphLayout,
    entity_emb: Matrix,
    rel_repr: Matrix,
    a: Matrix,
    slope: float,
    edge_weights: np.ndarray | None = None,
) -> AttentionScores:
    """
    S_ij = sum over triples linking i and j of leaky_relu(a^T([H_h || H_t] * R_r)),
    each term optionally scaled by its triple's pruning multiplier.
    """
    layout = _layout(kg)
    n = layout.n_entities
    if layout.heads.size == 0:
        return AttentionScores(Matrix.zeros(n, n), layout.mask, None)

    pair = concat_cols(gather_rows(entity_emb, layout.heads), gather_rows(entity_emb, layout.tails))
    terms = leaky_relu(matmul(mul(pair, gather_rows(rel_repr, layout.rels)), a), slope)

    mass = None
    if edge_weights is not None:
        edge_weights = np.asarray(edge_weights, dtype=np.float64)
        terms = mul(terms, Matrix._wrap(edge_weights[:, None]))
        mass = np.zeros((n, n))
        np.maximum.at(mass, (layout.edge_row, layout.edge_col), edge_weights[layout.edge_term])

    directed = gather_rows(terms, layout.edge_term)
    scores = scatter_add(directed, layout.edge_row, layout.edge_col, (n, n))
    return AttentionScores(scores, layout.mask, mass)


def gat_forward(
    kg: KnowledgeGraph | GraphLayout,
    init_emb: Matrix,
    params: EncoderParams,
    *,
    edge_weights: np.ndarray | None = None,
    attention_log: list[np.ndarray] | None = None,
) -> Matrix:
    """
    H^(l+1) = H^(l) + d^(l) * ReLU(sum_j a_ij H^(l)_j), then H = H^(L) W^n + b^n.
    Relation representations and scores are recomputed from H^(l) every layer.
    """
    layout = _layout(kg)
    init_emb = as_matrix(init_emb)
    if init_emb.rows != layout.n_entities:
        raise ValueError(f"init_emb has {init_emb.rows} rows for {layout.n_entities} entities")
    h = init_emb
    for layer in range(params.layers):
        rel, _ = relation_repr(layout, h, params.relation_attention)
        att = attention_scores(layout, h, rel, params.attention[layer], params.slope, edge_weights)
        weights, _ = rowwise_softmax_scaled(att.scores, params.epsilon, att.mask, att.mass)
        if attention_log is not None:
            attention_log.append(np.array(weights.data))
        h = add(h, mul(params.gates[layer], relu(matmul(weights, h))))
    return add(matmul(h, params.out_weight), params.out_bias)


def highway_combine(name_features: Matrix, neighborhood_features: Matrix, weight: Matrix, bias: Matrix) -> Matrix:
    """T = sigmoid(x W_h + b_h); out = T * neighborhood + (1 - T) * name, with x = name features."""
    name_features, neighborhood_features = as_matrix(name_features), as_matrix(neighborhood_features)
    if name_features.shape != neighborhood_features.shape:
        raise DimensionError(
            f"highway_combine: {name_features.shape} vs {neighborhood_features.shape}"
        )
    gate = sigmoid(add(matmul(name_features, weight), bias))
    return add(mul(gate, neighborhood_features), mul(sub(1.0, gate), name_features))


def encode(
    kg: KnowledgeGraph | GraphLayout,
    init_emb: Matrix,
    params: EncoderParams,
    *,
    use_highway: bool = True,
    edge_weights: np.ndarray | None = None,
) -> Matrix:
    init_emb = as_matrix(init_emb)
    out = gat_forward(kg, init_emb, params, edge_weights=edge_weights)
    if not use_highway:
        return out
    return highway_combine(init_emb, out, params.highway_weight, params.highway_bias)
