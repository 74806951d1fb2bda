"""Drug -> disease link prediction: negative sampling, training, MRR."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InsufficientNodes, NoTargetEdges
from .gcn import (
    EdgeWeights,
    GcnConfig,
    GcnModel,
    MessagePlan,
    check_schema,
    encode,
    forward_embeddings,
    init_model,
    param_tensors,
    score_edges,
    score_tensor,
)
from .graph import HeteroGraph, NodeType, Relation

TARGET = Relation.DRUG_TREATS_DISEASE


@dataclass(frozen=True)
class TrainConfig:
    negatives: int = 20
    epochs: int = 200
    lr: float = 1e-2
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be float64 or float32")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


@dataclass
class EvalResult:
    mrr: float
    reciprocal_ranks: np.ndarray
    seed: int | None = None

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["edge_index", "reciprocal_rank"])
            for i, rr in enumerate(self.reciprocal_ranks):
                w.writerow([i, repr(float(rr))])


def sample_negative_tails(tails: np.ndarray, num_diseases: int, k: int,
                          rng: np.random.Generator) -> np.ndarray:
    """``(n, k)`` disease ids drawn uniformly, excluding each row's own tail."""
    if num_diseases < 2:
        raise InsufficientNodes("negative sampling needs at least 2 disease nodes")
    tails = np.asarray(tails, dtype=np.int64).reshape(-1, 1)
    draw = rng.integers(0, num_diseases - 1, size=(len(tails), k))
    return draw + (draw >= tails)


def sample_negatives(positive: tuple[int, int], graph: HeteroGraph, k: int,
                     rng: np.random.Generator) -> list[tuple[int, int]]:
    u, v = positive
    tails = sample_negative_tails(np.array([v]), graph.node_counts[NodeType.DISEASE], k, rng)[0]
    return [(int(u), int(t)) for t in tails]


def train(graph: HeteroGraph, config: TrainConfig, gcn_config: GcnConfig | None = None,
          model: GcnModel | None = None) -> tuple[GcnModel, list[float]]:
    """Full-batch Adam on the mean margin loss over every treats-edge of ``graph``.

    Negatives are resampled each epoch.  Returns the trained copy and the
    loss recorded at each epoch before its update.
    """
    pos = graph.edges(TARGET) if TARGET in graph.relations else np.zeros((0, 2), np.int64)
    if not len(pos):
        raise NoTargetEdges("graph has no drug_treats_disease edges to train on")
    n_dis = graph.node_counts[NodeType.DISEASE]
    if model is None:
        model = init_model(gcn_config or GcnConfig(), graph)
    else:
        check_schema(model, graph)
        model = model.copy()
    model = model.astype(config.dtype)

    plan = MessagePlan.build(graph)
    rng = np.random.default_rng(config.seed)
    opt = ad.AdamState(lr=config.lr)
    k = config.negatives
    heads_rep = np.repeat(pos[:, 0], k)
    trace = []
    for _ in range(config.epochs):
        neg_tails = sample_negative_tails(pos[:, 1], n_dis, k, rng)
        params = param_tensors(model, trainable=True)
        z = encode(model, plan, params)
        s_pos = score_tensor(z, graph, pos[:, 0], pos[:, 1])
        s_neg = ad.reshape(score_tensor(z, graph, heads_rep, neg_tails.reshape(-1)), len(pos), k)
        loss = ad.margin_ranking_loss(s_pos, s_neg)
        loss.backward()
        trace.append(loss.item())
        grads = {n: t.grad for n, t in params.items() if t.grad is not None}
        ad.adam_update(opt, model.params, grads)
    return model, trace


def reciprocal_ranks(pos_scores: np.ndarray, neg_scores: np.ndarray) -> np.ndarray:
    """Pessimistic ranks: negatives tying the positive count against it."""
    pos_scores = np.asarray(pos_scores).reshape(-1, 1)
    rank = 1 + (np.asarray(neg_scores) >= pos_scores).sum(axis=1)
    return 1.0 / rank


def evaluate_mrr(model: GcnModel, graph: HeteroGraph, test_edges, k: int,
                 rng: np.random.Generator | int, weights: EdgeWeights | None = None) -> EvalResult:
    """MRR of held-out ``(drug, disease)`` edges against ``k`` sampled tails each.

    ``graph`` is the message-passing graph, which should not contain the test edges.
    """
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng) if seed is not None else rng
    pairs = np.asarray(test_edges, dtype=np.int64).reshape(-1, 2)
    n_dis = graph.node_counts[NodeType.DISEASE]
    neg = sample_negative_tails(pairs[:, 1], n_dis, k, rng)
    emb = forward_embeddings(model, graph, weights)
    s_pos = score_edges(emb, pairs)
    s_neg = score_edges(emb, np.column_stack([np.repeat(pairs[:, 0], k), neg.reshape(-1)])).reshape(len(pairs), k)
    rr = reciprocal_ranks(s_pos, s_neg)
    return EvalResult(float(rr.mean()) if len(rr) else float("nan"), rr, seed)


def write_loss_csv(trace, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])


def holdout_split(graph: HeteroGraph, fraction: float, seed: int) -> np.ndarray:
    """Seeded random subset of treats-edges, at least one, held out for evaluation."""
    pos = graph.edges(TARGET)
    if not len(pos):
        raise NoTargetEdges("graph has no drug_treats_disease edges")
    rng = np.random.default_rng(seed)
    n = max(1, int(round(fraction * len(pos))))
    pick = np.sort(rng.choice(len(pos), size=min(n, len(pos)), replace=False))
    return pos[pick].copy()
