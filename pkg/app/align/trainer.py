# app/align/trainer.py
"""
Semi-supervised training loop.

Each epoch: encode both graphs with shared parameters, mine hard negatives for
the current seed pairs (gold + pseudo), take one gradient step on the total
loss. Every `expansion_interval` epochs the soft labels and pruning
multipliers are refreshed and mutual nearest neighbors above the threshold are
admitted as pseudo-seeds. Epoch 0 (the untrained state) is evaluated too.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from app.align.checkpoint import Admission, Checkpoint, EpochRecord
from app.align.encoder import EncoderParams, encode, graph_layout
from app.align.errors import ConfigError, DivergenceError, NonFiniteError
from app.align.kg import DatasetSplit, KnowledgeGraph, Origin, SeedAlignment
from app.align.loss import EmbeddingPair, check_switches, mine_negatives, total_loss
from app.align.matcher import (
    Candidate,
    CandidateSet,
    SimilarityMatrix,
    candidates,
    evaluate,
    similarity_matrix,
)
from app.align.numeric import GradTape, Matrix, scale
from app.align.relation_text import RelationTextEmbedder, TrigramHashEmbedder, embed_relation_text
from app.align.schemas import TrainConfig, config_digest
from app.align.soft_labels import SoftLabelSet, entity_mode_labels, fuse, pruning_weights, relation_mode_labels

logger = logging.getLogger(__name__)

ENTITY_KEYS = ("ent1", "ent2")


class TrainingObserver:
    """Progress hooks; every method is a no-op here."""

    def on_start(self, cfg: TrainConfig, split: DatasetSplit, digest: str) -> None:
        pass

    def on_epoch(self, record: EpochRecord) -> None:
        pass

    def on_admissions(self, admissions: list[Admission], sim: SimilarityMatrix) -> None:
        """Called at every expansion with the similarity matrix the admissions were read from."""

    def on_soft_labels(self, epoch: int, labels: SoftLabelSet) -> None:
        pass

    def on_finish(self, ckpt: Checkpoint) -> None:
        pass

    def on_failure(self, exc: Exception) -> None:
        pass


class ObserverChain(TrainingObserver):
    """Forwards every hook to each observer in order; None entries are dropped."""

    def __init__(self, *observers: TrainingObserver | None) -> None:
        self.observers = [o for o in observers if o is not None]

    def on_start(self, cfg: TrainConfig, split: DatasetSplit, digest: str) -> None:
        for o in self.observers:
            o.on_start(cfg, split, digest)

    def on_epoch(self, record: EpochRecord) -> None:
        for o in self.observers:
            o.on_epoch(record)

    def on_admissions(self, admissions: list[Admission], sim: SimilarityMatrix) -> None:
        for o in self.observers:
            o.on_admissions(admissions, sim)

    def on_soft_labels(self, epoch: int, labels: SoftLabelSet) -> None:
        for o in self.observers:
            o.on_soft_labels(epoch, labels)

    def on_finish(self, ckpt: Checkpoint) -> None:
        for o in self.observers:
            o.on_finish(ckpt)

    def on_failure(self, exc: Exception) -> None:
        for o in self.observers:
            o.on_failure(exc)


# ----------------------------
# State
# ----------------------------

@dataclass
class AlignmentState:
    seeds: SeedAlignment
    candidates: CandidateSet = field(default_factory=CandidateSet)
    admissions: list[Admission] = field(default_factory=list)
    soft_labels: SoftLabelSet = field(default_factory=SoftLabelSet)
    edge_weights: tuple[np.ndarray | None, np.ndarray | None] = (None, None)

    @property
    def n_pseudo(self) -> int:
        return sum(1 for o in self.seeds.origins if o is Origin.PSEUDO)

    def pair_weights(self, pseudo_weight: float) -> list[float] | None:
        if pseudo_weight == 1.0 or self.n_pseudo == 0:
            return None
        return [1.0 if o is Origin.GOLD else pseudo_weight for o in self.seeds.origins]


@dataclass
class GradientDescent:
    """Constant-step gradient descent with optional heavy-ball momentum and global-norm clipping."""

    learning_rate: float
    momentum: float = 0.0
    grad_clip: float = 0.0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, values: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> tuple[dict[str, np.ndarray], float]:
        names = sorted(grads)
        norm = math.sqrt(sum(float(np.sum(grads[n] * grads[n])) for n in names))
        factor = self.grad_clip / norm if self.grad_clip > 0 and norm > self.grad_clip else 1.0
        out = dict(values)
        for name in names:
            g = grads[name] * factor
            if self.momentum > 0:
                prev = self.velocity.get(name)
                g = g if prev is None else self.momentum * prev + g
                self.velocity[name] = g
            out[name] = values[name] - self.learning_rate * g
        return out, norm


@dataclass(frozen=True)
class _Snapshot:
    epoch: int
    values: dict[str, np.ndarray]
    outputs1: np.ndarray
    outputs2: np.ndarray
    seeds: SeedAlignment
    soft_labels: SoftLabelSet
    val_hit1: float | None


# ----------------------------
# Seed expansion
# ----------------------------

def mutual_nearest(sim: SimilarityMatrix, current: SeedAlignment, threshold: float) -> list[Candidate]:
    """
    Pairs (u, v) with v the row argmax of u, u the column argmax of v, similarity
    >= threshold, and neither endpoint seeded yet. Argmax ties go to the earlier
    row/column.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    values = sim.values
    if values.size == 0:
        return []
    row_best = values.argmax(axis=1)
    col_best = values.argmax(axis=0)
    seeded1, seeded2 = current.left(), current.right()
    out = []
    for i, j in enumerate(row_best):
        if col_best[j] != i or values[i, j] < threshold:
            continue
        u, v = sim.row_ids[i], sim.col_ids[j]
        if u in seeded1 or v in seeded2:
            continue
        out.append(Candidate(u, v, float(values[i, j])))
    return out


def expand_seeds(sim: SimilarityMatrix, current: SeedAlignment, threshold: float) -> SeedAlignment:
    admitted = mutual_nearest(sim, current, threshold)
    return current.extend(((c.e1, c.e2) for c in admitted), Origin.PSEUDO)


# ----------------------------
# Trainer
# ----------------------------

def initial_features(kg: KnowledgeGraph, dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(kg.num_entities, dim))


def anchored_features(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    seeds: SeedAlignment,
    dim: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Both entities of a seed pair share one N(0, 1/sqrt(dim)) row; every other row is zero,
    so unseeded entities are described only by what the encoder gathers from their neighbors.
    """
    features1 = np.zeros((kg1.num_entities, dim))
    features2 = np.zeros((kg2.num_entities, dim))
    shared = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(len(seeds), dim))
    for k, (u, v) in enumerate(seeds.pairs):
        features1[kg1.entity_pos[u]] = shared[k]
        features2[kg2.entity_pos[v]] = shared[k]
    return features1, features2


def _fmt(x: float | None) -> str:
    return "na" if x is None else f"{x:.4f}"


class AlignmentTrainer:
    def __init__(
        self,
        kg1: KnowledgeGraph,
        kg2: KnowledgeGraph,
        split: DatasetSplit,
        cfg: TrainConfig,
        features1: np.ndarray | None = None,
        features2: np.ndarray | None = None,
        *,
        relation_embedder1: RelationTextEmbedder | None = None,
        relation_embedder2: RelationTextEmbedder | None = None,
        observer: TrainingObserver | None = None,
    ) -> None:
        if len(split.train) == 0:
            raise ConfigError("training split holds no seed pairs", field="split_ratios")
        check_switches(cfg.loss)
        for part in (split.train, split.validation, split.test):
            part.validate(kg1, kg2)

        self.kg1, self.kg2, self.split, self.cfg = kg1, kg2, split, cfg
        self.observer = observer or TrainingObserver()
        self.digest = config_digest(cfg)
        rng = np.random.default_rng(cfg.rng_seed)

        if (features1 is None) != (features2 is None):
            raise ConfigError("initial embeddings must be given for both graphs or neither", field="dim")
        if features1 is None and cfg.embedding_init == "anchored":
            features1, features2 = anchored_features(kg1, kg2, split.train, cfg.dim, rng)
        elif features1 is None:
            features1 = initial_features(kg1, cfg.dim, rng)
            features2 = initial_features(kg2, cfg.dim, rng)
        for kg, feats in ((kg1, features1), (kg2, features2)):
            if feats.shape != (kg.num_entities, cfg.dim):
                raise ConfigError(
                    f"initial embeddings of {kg.name or 'graph'} have shape {feats.shape}, "
                    f"expected ({kg.num_entities}, {cfg.dim})",
                    field="dim",
                )

        params = EncoderParams.initial(cfg.dim, cfg.layers, rng, epsilon=cfg.epsilon, slope=cfg.leaky_slope)
        self.values: dict[str, np.ndarray] = {
            **params.arrays(),
            "ent1": np.array(features1, dtype=np.float64),
            "ent2": np.array(features2, dtype=np.float64),
        }
        self.optimizer = GradientDescent(cfg.learning_rate, cfg.momentum, cfg.grad_clip)
        self.rng = rng
        self.state = AlignmentState(seeds=split.train)

        graph_layout(kg1)
        graph_layout(kg2)
        self.rel_text1 = self.rel_text2 = None
        if cfg.soft_labels.use_soft_labels:
            default = TrigramHashEmbedder(cfg.soft_labels.relation_text_dim)
            self.rel_text1, _ = embed_relation_text(relation_embedder1 or default, kg1)
            self.rel_text2, _ = embed_relation_text(relation_embedder2 or default, kg2)

    # ----- forward -----

    def _trainable(self, name: str) -> bool:
        return self.cfg.train_embeddings or name not in ENTITY_KEYS

    def encode(self, values: dict[str, np.ndarray], tape: GradTape | None = None) -> tuple[Matrix, Matrix]:
        tracked: dict[str, Matrix] = {}
        for name in sorted(values):
            if tape is not None and self._trainable(name):
                tracked[name] = tape.watch(name, values[name])
            else:
                tracked[name] = Matrix._wrap(values[name])
        params = EncoderParams.from_arrays(
            {k: v for k, v in tracked.items() if k not in ENTITY_KEYS},
            epsilon=self.cfg.epsilon,
            slope=self.cfg.leaky_slope,
        )
        w1, w2 = self.state.edge_weights
        out1 = encode(self.kg1, tracked["ent1"], params, use_highway=self.cfg.use_highway, edge_weights=w1)
        out2 = encode(self.kg2, tracked["ent2"], params, use_highway=self.cfg.use_highway, edge_weights=w2)
        return out1, out2

    def similarity(self, out1: Matrix | np.ndarray, out2: Matrix | np.ndarray) -> SimilarityMatrix:
        return similarity_matrix(out1, out2, self.kg1.entity_ids, self.kg2.entity_ids)

    def step(self) -> float:
        positives = self.state.seeds.pairs
        with GradTape() as tape:
            out1, out2 = self.encode(self.values, tape)
            sim = self.similarity(out1, out2)
            negatives = mine_negatives(sim, positives, self.cfg.loss.k)
            pair = EmbeddingPair(out1, out2, self.kg1.entity_pos, self.kg2.entity_pos)
            loss = total_loss(
                pair, positives, negatives, self.cfg.loss,
                pair_weights=self.state.pair_weights(self.cfg.pseudo_weight),
            )
            if self.cfg.loss_reduction == "mean":
                loss = scale(loss, 1.0 / len(positives))
            grads = tape.gradient(loss)
        value = loss.item()
        if not math.isfinite(value) or not all(np.isfinite(g).all() for g in grads.values()):
            raise NonFiniteError("loss or gradient is not finite")
        if self.cfg.update_rows == "seeded":
            grads = self.mask_unseeded(grads)
        self.values, _ = self.optimizer.step(self.values, grads)
        return value

    def mask_unseeded(self, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Zero the entity-row gradients of every entity outside the current seed pairs."""
        seeds = self.state.seeds
        rows = {
            "ent1": [self.kg1.entity_pos[u] for u, _ in seeds.pairs],
            "ent2": [self.kg2.entity_pos[v] for _, v in seeds.pairs],
        }
        out = dict(grads)
        for name, index in rows.items():
            if name not in grads:
                continue
            masked = np.zeros_like(grads[name])
            masked[index] = grads[name][index]
            out[name] = masked
        return out

    # ----- periodic work -----

    def refresh_soft_labels(self, epoch: int, out1: np.ndarray, out2: np.ndarray, sim: SimilarityMatrix) -> SoftLabelSet:
        sl = self.cfg.soft_labels
        cands = candidates(sim, self.cfg.candidate_threshold)
        self.state.candidates = cands
        ent = entity_mode_labels(
            self.kg1, self.kg2, out1, out2, self.state.seeds,
            sl.entity_sim_threshold, sl.entity_match_threshold,
            max_seed_neighbors=sl.max_seed_neighbors,
        )
        rel = relation_mode_labels(
            self.kg1, self.kg2, self.rel_text1, self.rel_text2, cands,
            sl.relation_sim_threshold, sl.relation_match_threshold,
            seeds=self.state.seeds,
        )
        fused = fuse(ent, rel)
        self.state.soft_labels = fused
        if fused.mapping:
            self.state.edge_weights = pruning_weights(fused, self.kg1, self.kg2, sl.prune_lambda)
        else:
            self.state.edge_weights = (None, None)
        logger.info(
            "soft labels epoch=%d candidates=%d entity_mode=%d relation_mode=%d fused=%d",
            epoch, len(cands), len(ent), len(rel), len(fused),
        )
        self.observer.on_soft_labels(epoch, fused)
        return fused

    def expand(self, epoch: int, sim: SimilarityMatrix) -> list[Admission]:
        admitted = mutual_nearest(sim, self.state.seeds, self.cfg.expansion.mnn_threshold)
        self.state.seeds = self.state.seeds.extend(((c.e1, c.e2) for c in admitted), Origin.PSEUDO)
        records = [Admission(epoch, c.e1, c.e2, c.similarity) for c in admitted]
        if admitted and self.cfg.train_embeddings and self.cfg.expansion.tie_admitted:
            self.tie_rows(admitted)
        self.state.admissions.extend(records)
        logger.info("expansion epoch=%d admitted=%d n_pseudo=%d", epoch, len(records), self.state.n_pseudo)
        self.observer.on_admissions(records, sim)
        return records

    def tie_rows(self, admitted: list[Candidate]) -> None:
        """
        Give both entities of each admitted pair one embedding row: the mean of the two
        rows, or a fresh shared draw when both are still zero.
        """
        ent1, ent2 = self.values["ent1"].copy(), self.values["ent2"].copy()
        std = 1.0 / np.sqrt(self.cfg.dim)
        fresh = 0
        for c in admitted:
            i, j = self.kg1.entity_pos[c.e1], self.kg2.entity_pos[c.e2]
            if ent1[i].any() or ent2[j].any():
                shared = 0.5 * (ent1[i] + ent2[j])
            else:
                shared = self.rng.normal(0.0, std, size=self.cfg.dim)
                fresh += 1
            ent1[i] = shared
            ent2[j] = shared
        self.values = {**self.values, "ent1": ent1, "ent2": ent2}
        logger.debug("tied rows admitted=%d fresh=%d", len(admitted), fresh)

    def _val_hit1(self, sim: SimilarityMatrix) -> float | None:
        if len(self.split.validation) == 0:
            return None
        return evaluate(sim, self.split.validation, (1,))["hit1"]

    def _snapshot(self, epoch: int) -> _Snapshot:
        out1, out2 = self.encode(self.values)
        sim = self.similarity(out1, out2)
        refresh = epoch > 0 and epoch % self.cfg.expansion.expansion_interval == 0
        if refresh and self.cfg.soft_labels.use_soft_labels:
            self.refresh_soft_labels(epoch, out1.data, out2.data, sim)
            out1, out2 = self.encode(self.values)
            sim = self.similarity(out1, out2)
        if refresh and self.cfg.expansion.use_expansion:
            admitted = self.expand(epoch, sim)
            if admitted and self.cfg.train_embeddings and self.cfg.expansion.tie_admitted:
                out1, out2 = self.encode(self.values)
                sim = self.similarity(out1, out2)
        return _Snapshot(
            epoch=epoch,
            values=dict(self.values),
            outputs1=out1.data,
            outputs2=out2.data,
            seeds=self.state.seeds,
            soft_labels=self.state.soft_labels,
            val_hit1=self._val_hit1(sim),
        )

    # ----- loop -----

    def run(self) -> Checkpoint:
        cfg = self.cfg
        self.observer.on_start(cfg, self.split, self.digest)
        history: list[EpochRecord] = []
        last_finite: tuple[int, float | None] = (0, None)

        def record(snap: _Snapshot, loss: float | None) -> None:
            rec = EpochRecord(snap.epoch, loss, snap.val_hit1, self.state.n_pseudo)
            history.append(rec)
            self.observer.on_epoch(rec)

        try:
            last = best = self._snapshot(0)
            record(last, None)
            logger.info("epoch=0 val_hit1=%s n_pseudo=0", _fmt(last.val_hit1))
            for epoch in range(1, cfg.epochs + 1):
                try:
                    loss = self.step()
                    last = self._snapshot(epoch)
                except NonFiniteError as exc:
                    raise DivergenceError(
                        epoch, last_finite_epoch=last_finite[0], last_finite_loss=last_finite[1]
                    ) from exc
                last_finite = (epoch, loss)
                record(last, loss)
                if last.val_hit1 is not None and (best.val_hit1 is None or last.val_hit1 > best.val_hit1):
                    best = last
                if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
                    logger.info(
                        "epoch=%d loss=%.6f val_hit1=%s n_pseudo=%d",
                        epoch, loss, _fmt(last.val_hit1), self.state.n_pseudo,
                    )
                if cfg.patience and best.val_hit1 is not None and epoch - best.epoch >= cfg.patience:
                    logger.info("early stop epoch=%d best_epoch=%d", epoch, best.epoch)
                    break
        except Exception as exc:
            self.observer.on_failure(exc)
            raise

        if best.val_hit1 is None:
            best = last
        chosen = best if cfg.select == "best" else last
        ckpt = Checkpoint(
            config=cfg,
            config_digest=self.digest,
            epoch=chosen.epoch,
            best_epoch=best.epoch,
            params={k: v for k, v in chosen.values.items() if k not in ENTITY_KEYS},
            embeddings1=chosen.values["ent1"],
            embeddings2=chosen.values["ent2"],
            outputs1=chosen.outputs1,
            outputs2=chosen.outputs2,
            entity_ids1=self.kg1.entity_ids,
            entity_ids2=self.kg2.entity_ids,
            split=self.split,
            seeds=chosen.seeds,
            admissions=[a for a in self.state.admissions if a.epoch <= chosen.epoch],
            history=history,
            soft_labels=chosen.soft_labels,
        )
        logger.info(
            "training done epochs=%d selected_epoch=%d best_epoch=%d best_val_hit1=%s",
            history[-1].epoch, ckpt.epoch, best.epoch, _fmt(best.val_hit1),
        )
        self.observer.on_finish(ckpt)
        return ckpt


def train(
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
    split: DatasetSplit,
    cfg: TrainConfig,
    features1: np.ndarray | None = None,
    features2: np.ndarray | None = None,
    *,
    relation_embedder1: RelationTextEmbedder | None = None,
    relation_embedder2: RelationTextEmbedder | None = None,
    observer: TrainingObserver | None = None,
) -> Checkpoint:
    trainer = AlignmentTrainer(
        kg1, kg2, split, cfg, features1, features2,
        relation_embedder1=relation_embedder1,
        relation_embedder2=relation_embedder2,
        observer=observer,
    )
    return trainer.run()


def evaluate_checkpoint(
    ckpt: Checkpoint,
    split: DatasetSplit | None = None,
    ks: tuple[int, ...] | list[int] | None = None,
) -> dict:
    """Test-split metrics from the checkpoint's stored output embeddings."""
    split = split or ckpt.split
    sim = similarity_matrix(ckpt.outputs1, ckpt.outputs2, ckpt.entity_ids1, ckpt.entity_ids2)
    return evaluate(sim, split.test, ks or ckpt.config.ks, config_digest=ckpt.config_digest)
