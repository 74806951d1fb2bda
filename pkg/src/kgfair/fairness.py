"""Bias detection with counterfactual twin graphs and de-biasing by edge re-weighting.

Detection for a sensitive pair ``(w0, w1)``: pick one treats-edge per drug
that touches neither node (a *free* drug), hold those edges out, then build
two graphs in which every free drug is attached to ``w0`` or to ``w1``.  The
bias is the mean absolute difference of the held-out edge scores between
the two graphs.

De-biasing freezes the encoder and learns one scalar per drug/SDoH message
direction so that scores on a second, disjoint held-out set agree across
the twin graphs.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import (
    CannotEnsureDisjointness,
    EmptyTestSet,
    NoFreeDrugs,
    NoTestableEdges,
    NoTargetEdges,
)
from .gcn import (
    EdgeWeights,
    GcnConfig,
    GcnModel,
    MessagePlan,
    check_schema,
    encode,
    forward_embeddings,
    param_tensors,
    score_edges,
    score_tensor,
)
from .graph import (
    SENSITIVE_CATEGORIES,
    HeteroGraph,
    NodeType,
    Relation,
    SdohCategory,
    attach_pairs,
    mask_pairs,
    sensitive_pair,
)
from .linkpred import TARGET, TrainConfig, evaluate_mrr, holdout_split, train
from .report import BiasReport, ReportRow


@dataclass(frozen=True)
class SensitivePair:
    """A sensitive category and its two SDoH node ids ``(w0, w1)``."""

    category: SdohCategory
    w0: int
    w1: int

    @classmethod
    def of(cls, category: SdohCategory | str) -> "SensitivePair":
        category = SdohCategory(category)
        return cls(category, *sensitive_pair(category))

    def swapped(self) -> "SensitivePair":
        return SensitivePair(self.category, self.w1, self.w0)


def _pair(category) -> SensitivePair:
    return category if isinstance(category, SensitivePair) else SensitivePair.of(category)


@dataclass
class BiasSplits:
    pair: SensitivePair
    train_graph: HeteroGraph
    g0: HeteroGraph
    g1: HeteroGraph
    test_edges: np.ndarray  # (n, 2) drug, disease
    free_drugs: np.ndarray
    seed: int


@dataclass
class DebiasSplits:
    pair: SensitivePair
    g0: HeteroGraph
    g1: HeteroGraph
    test_edges: np.ndarray
    dropped_drugs: np.ndarray
    seed: int


@dataclass
class BiasMeasurement:
    bias: float
    diffs: np.ndarray  # s0 - s1 per test edge
    s0: np.ndarray
    s1: np.ndarray


def find_free_drugs(graph: HeteroGraph, category) -> np.ndarray:
    """Drugs with no drug/SDoH edge to either node of the pair, sorted by id."""
    pair = _pair(category)
    edges = graph.edges(Relation.DRUG_HAS_SDOH)
    touched = edges[np.isin(edges[:, 1], [pair.w0, pair.w1]), 0]
    drugs = np.arange(graph.node_counts[NodeType.DRUG])
    return drugs[~np.isin(drugs, touched)]


def _treats_by_drug(graph: HeteroGraph):
    treats = graph.edges(TARGET)
    starts = np.searchsorted(treats[:, 0], np.arange(graph.node_counts[NodeType.DRUG] + 1))
    return treats, starts


def _pick_edges(graph: HeteroGraph, drugs: np.ndarray, rng: np.random.Generator,
                per_drug: int, exclude: np.ndarray | None = None):
    """Per drug, up to ``per_drug`` treats-edges drawn without replacement.

    Returns (chosen pairs, drugs that had no eligible edge).
    """
    treats, starts = _treats_by_drug(graph)
    n_dis = max(graph.node_counts[NodeType.DISEASE], 1)
    banned = set() if exclude is None else set((exclude[:, 0] * n_dis + exclude[:, 1]).tolist())
    chosen, empty = [], []
    for d in drugs:
        cand = treats[starts[d]:starts[d + 1]]
        if banned:
            keep = [(h * n_dis + t) not in banned for h, t in cand]
            cand = cand[np.array(keep, dtype=bool)] if len(cand) else cand
        if not len(cand):
            empty.append(int(d))
            continue
        take = min(per_drug, len(cand))
        idx = rng.choice(len(cand), size=take, replace=False) if take > 1 else [rng.integers(len(cand))]
        chosen.extend(cand[np.sort(np.asarray(idx))])
    pairs = np.array(chosen, dtype=np.int64).reshape(-1, 2)
    return pairs, np.array(empty, dtype=np.int64)


def _twins(base: HeteroGraph, pair: SensitivePair, drugs: np.ndarray) -> tuple[HeteroGraph, HeteroGraph]:
    g0 = attach_pairs(base, Relation.DRUG_HAS_SDOH, np.column_stack([drugs, np.full(len(drugs), pair.w0)]))
    if pair.w0 == pair.w1:
        return g0, g0
    g1 = attach_pairs(base, Relation.DRUG_HAS_SDOH, np.column_stack([drugs, np.full(len(drugs), pair.w1)]))
    return g0, g1


def build_bias_splits(graph: HeteroGraph, category, seed: int, edges_per_drug: int = 1) -> BiasSplits:
    """Hold out treats-edges of free drugs and build the two twin graphs."""
    pair = _pair(category)
    free = find_free_drugs(graph, pair)
    if not len(free):
        raise NoFreeDrugs(f"no drug is free of {pair.category.value}")
    rng = np.random.default_rng([seed, 0])
    test, _ = _pick_edges(graph, free, rng, edges_per_drug)
    if not len(test):
        raise NoTestableEdges(f"no {pair.category.value}-free drug has a treats-edge")
    train_graph = mask_pairs(graph, TARGET, test)
    g0, g1 = _twins(train_graph, pair, free)
    return BiasSplits(pair, train_graph, g0, g1, test, free, seed)


def build_debias_splits(graph: HeteroGraph, category, seed: int, exclude: np.ndarray,
                        edges_per_drug: int = 1) -> DebiasSplits:
    """Twin graphs over a second held-out set disjoint from ``exclude``.

    Both ``exclude`` and the new set are masked from the twin graphs.  Free
    drugs whose only treats-edges are in ``exclude`` are dropped with a
    :class:`CannotEnsureDisjointness` warning.
    """
    pair = _pair(category)
    exclude = np.asarray(exclude, dtype=np.int64).reshape(-1, 2)
    free = find_free_drugs(graph, pair)
    if not len(free):
        raise NoFreeDrugs(f"no drug is free of {pair.category.value}")
    rng = np.random.default_rng([seed, 1])
    test, empty = _pick_edges(graph, free, rng, edges_per_drug, exclude=exclude)
    had_edges = np.diff(_treats_by_drug(graph)[1])[empty] > 0 if len(empty) else np.zeros(0, bool)
    dropped = empty[had_edges]
    if len(dropped):
        warnings.warn(f"{len(dropped)} free drug(s) have no treats-edge outside the detection set "
                      f"and are left out of the de-bias set", CannotEnsureDisjointness, stacklevel=2)
    if not len(test):
        raise EmptyTestSet(f"no disjoint de-bias edges for {pair.category.value}")
    n_dis = max(graph.node_counts[NodeType.DISEASE], 1)
    assert not np.isin(test[:, 0] * n_dis + test[:, 1], exclude[:, 0] * n_dis + exclude[:, 1]).any()
    base = mask_pairs(mask_pairs(graph, TARGET, exclude), TARGET, test)
    g0, g1 = _twins(base, pair, free)
    return DebiasSplits(pair, g0, g1, test, dropped, seed)


def detect_bias(model: GcnModel, splits: BiasSplits | DebiasSplits,
                weights: EdgeWeights | None = None) -> BiasMeasurement:
    """Mean absolute score difference of the held-out edges across the twin graphs."""
    check_schema(model, splits.g0)
    s0 = score_edges(forward_embeddings(model, splits.g0, weights), splits.test_edges)
    if splits.g1 is splits.g0:
        s1 = s0.copy()
    else:
        s1 = score_edges(forward_embeddings(model, splits.g1, weights), splits.test_edges)
    diffs = s0 - s1
    return BiasMeasurement(float(np.abs(diffs).mean()), diffs, s0, s1)


def fit_edge_weights(model: GcnModel, debias: DebiasSplits, epochs: int = 500, lr: float = 0.01,
                     weights: EdgeWeights | None = None, optimizer: str = "adam") -> tuple[EdgeWeights, list[float]]:
    """Adam on the mean squared twin-score difference, encoder frozen.

    Returns the learned weights and the loss trace; the trace has
    ``epochs + 1`` entries, the last one measured after the final update.
    """
    if not len(debias.test_edges):
        raise EmptyTestSet("de-bias test set is empty")
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    check_schema(model, debias.g0)
    weights = (EdgeWeights.init_for([debias.g0, debias.g1]) if weights is None else weights.copy())
    plans = [MessagePlan.build(debias.g0), MessagePlan.build(debias.g1)]
    indexes = [p.weight_index(weights) for p in plans]
    frozen = param_tensors(model, trainable=False)
    drugs, diseases = debias.test_edges[:, 0], debias.test_edges[:, 1]
    values = weights.values.reshape(-1, 1).astype(model.dtype)
    opt = ad.AdamState(lr=lr)

    def loss_at(track: bool):
        w = ad.Tensor(values, requires_grad=track)
        s = [score_tensor(encode(model, p, frozen, w, ix), p.graph, drugs, diseases)
             for p, ix in zip(plans, indexes)]
        return w, ad.mean_squared_diff_loss(s[0], s[1])

    trace = []
    for _ in range(epochs):
        w, loss = loss_at(True)
        loss.backward()
        trace.append(loss.item())
        if optimizer == "adam":
            ad.adam_update(opt, {"e": values}, {"e": w.grad})
        else:
            values -= lr * w.grad
    trace.append(loss_at(False)[1].item())
    return EdgeWeights(weights.keys, values.reshape(-1).astype(np.float64)), trace


# --------------------------------------------------------------------------
# Audits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditConfig:
    categories: tuple[str, ...] = tuple(c.value for c in SENSITIVE_CATEGORIES)
    debias_epochs: int = 500
    debias_lr: float = 0.01
    eval_fraction: float = 0.1
    edges_per_drug: int = 1
    debias_edges_per_drug: int | None = 2
    share_backbone: bool = False

    def __post_init__(self):
        for c in self.categories:
            if SdohCategory(c) not in SENSITIVE_CATEGORIES:
                raise ValueError(f"{c} is not a sensitive category")
        if self.debias_epochs < 1:
            raise ValueError("debias_epochs must be >= 1")
        if not self.debias_lr > 0:
            raise ValueError("debias_lr must be positive")
        if not 0 < self.eval_fraction < 1:
            raise ValueError("eval_fraction must be in (0, 1)")
        if self.edges_per_drug < 1:
            raise ValueError("edges_per_drug must be >= 1")
        if self.debias_edges_per_drug is not None and self.debias_edges_per_drug < 1:
            raise ValueError("debias_edges_per_drug must be >= 1")

    @property
    def fit_edges_per_drug(self) -> int:
        return self.edges_per_drug if self.debias_edges_per_drug is None else self.debias_edges_per_drug


@dataclass
class CategoryAudit:
    row: ReportRow
    before: BiasMeasurement | None = None
    after: BiasMeasurement | None = None
    test_edges: np.ndarray | None = None
    debias_edges: np.ndarray | None = None
    train_trace: list[float] = field(default_factory=list)
    fair_trace: list[float] = field(default_factory=list)
    weights: EdgeWeights | None = None
    backbone_checksum: str | None = None

    def details(self) -> dict:
        out = self.row.as_dict()
        if self.before is None:
            return out
        out.update(
            num_test_edges=int(len(self.test_edges)),
            num_debias_edges=0 if self.debias_edges is None else int(len(self.debias_edges)),
            test_edges=self.test_edges.tolist(),
            diffs_before=[float(x) for x in self.before.diffs],
            diffs_after=[float(x) for x in self.after.diffs],
            train_loss=[float(x) for x in self.train_trace],
            fairness_loss=[float(x) for x in self.fair_trace],
            backbone_sha256=self.backbone_checksum,
        )
        if self.weights is not None and len(self.weights):
            out["edge_weight_range"] = [float(self.weights.values.min()), float(self.weights.values.max())]
        return out


def audit_category(graph: HeteroGraph, category, seed: int, eval_edges: np.ndarray,
                   gcn_config: GcnConfig, train_config: TrainConfig, audit: AuditConfig,
                   model: GcnModel | None = None, fit: bool = True) -> CategoryAudit:
    """One report row: detect, optionally de-bias, re-measure on the detection set.

    ``graph`` must already exclude ``eval_edges``.  Without ``model`` a fresh
    encoder is trained on the detection training graph.
    """
    pair = _pair(category)
    name = pair.category.value
    try:
        splits = build_bias_splits(graph, pair, seed, audit.edges_per_drug)
    except (NoFreeDrugs, NoTestableEdges) as exc:
        return CategoryAudit(ReportRow.skipped(name, seed, exc.code))
    trace: list[float] = []
    if model is None:
        model, trace = train(splits.train_graph, replace(train_config, seed=seed), replace(gcn_config, seed=seed))
    checksum = model.checksum()
    before = detect_bias(model, splits)
    mrr_seed = int(np.random.SeedSequence([seed, 2]).generate_state(1)[0])
    k = train_config.negatives
    mrr_before = evaluate_mrr(model, splits.train_graph, eval_edges, k, mrr_seed).mrr
    if not fit:
        row = ReportRow(name, before.bias, before.bias, 0.0, mrr_before, mrr_before, 0.0, seed)
        return CategoryAudit(row, before, before, splits.test_edges, None, trace, [], None, checksum)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CannotEnsureDisjointness)
            debias = build_debias_splits(graph, pair, seed, splits.test_edges, audit.fit_edges_per_drug)
    except EmptyTestSet as exc:
        return CategoryAudit(ReportRow.skipped(name, seed, exc.code))
    weights, fair_trace = fit_edge_weights(model, debias, audit.debias_epochs, audit.debias_lr)
    if model.checksum() != checksum:
        raise RuntimeError("encoder parameters changed during de-biasing")
    after = detect_bias(model, splits, weights)
    mrr_after = evaluate_mrr(model, splits.train_graph, eval_edges, k, mrr_seed, weights).mrr
    row = ReportRow(name, before.bias, after.bias, before.bias - after.bias,
                    mrr_before, mrr_after, mrr_before - mrr_after, seed)
    return CategoryAudit(row, before, after, splits.test_edges, debias.test_edges,
                         trace, fair_trace, weights, checksum)


def audit_report(graph: HeteroGraph, seeds, gcn_config: GcnConfig | None = None,
                 train_config: TrainConfig | None = None, audit: AuditConfig | None = None,
                 model: GcnModel | None = None, fit: bool = True, jobs: int = 1) -> tuple[BiasReport, list[CategoryAudit]]:
    """Rows for every (seed, category), in that order.

    A shared held-out treats-edge set (``audit.eval_fraction``) is removed
    up front and used for all MRR measurements of a seed.
    """
    gcn_config = gcn_config or GcnConfig()
    train_config = train_config or TrainConfig()
    audit = audit or AuditConfig()
    if not len(graph.edges(TARGET)):
        raise NoTargetEdges("graph has no drug_treats_disease edges")
    tasks = []
    for seed in seeds:
        eval_edges = holdout_split(graph, audit.eval_fraction, seed)
        base = mask_pairs(graph, TARGET, eval_edges)
        shared = model
        if shared is None and audit.share_backbone:
            shared = _shared_backbone(base, seed, gcn_config, train_config, audit)
        for cat in audit.categories:
            tasks.append((base, cat, seed, eval_edges, shared))

    def run(task):
        base, cat, seed, eval_edges, shared = task
        return audit_category(base, cat, seed, eval_edges, gcn_config, train_config, audit, shared, fit)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    return BiasReport([r.row for r in results]), results


def _shared_backbone(base: HeteroGraph, seed: int, gcn_config: GcnConfig,
                     train_config: TrainConfig, audit: AuditConfig) -> GcnModel:
    """One encoder trained with every category's detection edges masked."""
    held = []
    for cat in audit.categories:
        try:
            held.append(build_bias_splits(base, cat, seed, audit.edges_per_drug).test_edges)
        except (NoFreeDrugs, NoTestableEdges):
            continue
    train_graph = base
    if held:
        train_graph = mask_pairs(base, TARGET, np.unique(np.concatenate(held), axis=0))
    model, _ = train(train_graph, replace(train_config, seed=seed), replace(gcn_config, seed=seed))
    return model
