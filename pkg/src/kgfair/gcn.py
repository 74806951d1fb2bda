"""Heterogeneous GCN encoder with optional learnable SDoH-drug edge weights.

Each layer computes, for every destination node ``i``::

    h_i' = act(b + sum_{(j -> i)} (e_ji / c_ji) * h_j @ W_{rel, dir})

where ``c_ji = sqrt(deg j) * sqrt(deg i)`` uses global undirected degrees and
``e_ji`` is 1 except on reweighted drug/SDoH edges.  Every relation is
traversed in both directions, each direction with its own weight matrix.
The last layer has no activation and no self-loops are added.
"""

from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .errors import IndexOutOfRange, ParseError, SchemaMismatch
from .graph import NODE_TYPES, HeteroGraph, NodeType, Relation

RelDir = tuple[Relation, bool]  # (relation, reversed)


def reldir_name(key: RelDir) -> str:
    rel, rev = key
    return f"{rel.value}__rev" if rev else rel.value


@dataclass(frozen=True)
class GcnConfig:
    embedding_dim: int = 64
    hidden_dim: int = 64
    num_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.embedding_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dims must be >= 1")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")

    def layer_dims(self, layer: int) -> tuple[int, int]:
        return (self.embedding_dim if layer == 0 else self.hidden_dim), self.hidden_dim


@dataclass
class GcnModel:
    config: GcnConfig
    node_counts: dict[NodeType, int]
    relations: tuple[Relation, ...]
    params: dict[str, np.ndarray]

    @property
    def reldirs(self) -> list[RelDir]:
        return [(r, rev) for r in self.relations for rev in (False, True)]

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in self.params:
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    def copy(self) -> "GcnModel":
        return GcnModel(self.config, dict(self.node_counts), self.relations,
                        {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "GcnModel":
        return GcnModel(self.config, dict(self.node_counts), self.relations,
                        {k: v.astype(dtype) for k, v in self.params.items()})


def input_name(t: NodeType) -> str:
    return f"input.{t.value}"


def weight_name(layer: int, key: RelDir) -> str:
    return f"W.{layer}.{reldir_name(key)}"


def bias_name(layer: int) -> str:
    return f"b.{layer}"


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


def init_model(config: GcnConfig, graph: HeteroGraph) -> GcnModel:
    """Glorot-uniform weights and input embeddings, zero biases, all from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    for t in NODE_TYPES:
        params[input_name(t)] = _glorot(rng, graph.node_counts[t], config.embedding_dim)
    reldirs = [(r, rev) for r in graph.relations for rev in (False, True)]
    for layer in range(config.num_layers):
        d_in, d_out = config.layer_dims(layer)
        for key in reldirs:
            params[weight_name(layer, key)] = _glorot(rng, d_in, d_out)
        params[bias_name(layer)] = np.zeros((1, d_out))
    return GcnModel(config, dict(graph.node_counts), tuple(graph.relations), params)


# --------------------------------------------------------------------------
# Edge weights on SDoH <-> drug edges
# --------------------------------------------------------------------------


@dataclass
class EdgeWeights:
    """Scalar multipliers keyed by ``(drug, sdoh, reversed)``.

    ``reversed=False`` is the drug -> sdoh message direction.  Unlisted edges
    carry an implicit weight of 1.
    """

    keys: np.ndarray  # (m, 3) int64: drug, sdoh, reversed
    values: np.ndarray  # (m,)

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.int64).reshape(-1, 3)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(self.keys) != len(self.values):
            raise ValueError("keys and values lengths differ")

    @classmethod
    def init_for(cls, graphs: Iterable[HeteroGraph]) -> "EdgeWeights":
        """Weight 1.0 on every drug/SDoH edge of any graph, in both directions."""
        pairs = [g.edges(Relation.DRUG_HAS_SDOH) for g in graphs if Relation.DRUG_HAS_SDOH in g.relations]
        pairs = np.unique(np.concatenate(pairs), axis=0) if pairs else np.zeros((0, 2), np.int64)
        keys = np.concatenate([
            np.column_stack([pairs, np.zeros(len(pairs), np.int64)]),
            np.column_stack([pairs, np.ones(len(pairs), np.int64)]),
        ])
        return cls(keys, np.ones(len(keys)))

    def __len__(self):
        return len(self.values)

    def copy(self) -> "EdgeWeights":
        return EdgeWeights(self.keys.copy(), self.values.copy())

    def _codes(self, drug, sdoh, rev) -> np.ndarray:
        return (np.asarray(rev, np.int64) * 2**40) + np.asarray(drug, np.int64) * 2**20 + np.asarray(sdoh, np.int64)

    def lookup(self, drug, sdoh, rev) -> np.ndarray:
        """Row index of each requested key, ``-1`` where absent."""
        have = self._codes(self.keys[:, 0], self.keys[:, 1], self.keys[:, 2])
        order = np.argsort(have, kind="stable")
        want = self._codes(drug, sdoh, rev)
        pos = np.searchsorted(have[order], want)
        pos = np.minimum(pos, max(len(have) - 1, 0))
        if not len(have):
            return np.full(len(want), -1, dtype=np.int64)
        found = have[order][pos] == want
        return np.where(found, order[pos], -1)

    def value(self, drug: int, sdoh: int, rev: bool = False) -> float:
        i = self.lookup([drug], [sdoh], [int(rev)])[0]
        return 1.0 if i < 0 else float(self.values[i])


# --------------------------------------------------------------------------
# Message-passing plan
# --------------------------------------------------------------------------


@dataclass
class MessagePlan:
    """Per-graph aggregation structure, reusable across forward passes."""

    graph: HeteroGraph
    aggs: dict[RelDir, ad.SparseAgg]
    src_types: dict[RelDir, NodeType]

    @classmethod
    def build(cls, graph: HeteroGraph) -> "MessagePlan":
        inv_sqrt = np.zeros(graph.num_nodes)
        nz = graph.degrees > 0
        inv_sqrt[nz] = 1.0 / np.sqrt(graph.degrees[nz])
        aggs, src_types = {}, {}
        for rel in graph.relations:
            arr = graph.edges(rel)
            for rev in (False, True):
                st, dt = (rel.tail_type, rel.head_type) if rev else (rel.head_type, rel.tail_type)
                src_local = arr[:, 1] if rev else arr[:, 0]
                dst_local = arr[:, 0] if rev else arr[:, 1]
                src_g = src_local + graph.offsets[st]
                dst_g = dst_local + graph.offsets[dt]
                coeff = inv_sqrt[src_g] * inv_sqrt[dst_g]
                aggs[(rel, rev)] = ad.SparseAgg.from_pairs(
                    graph.num_nodes, graph.node_counts[st], src_local, dst_g, coeff)
                src_types[(rel, rev)] = st
        return cls(graph, aggs, src_types)

    def weight_index(self, weights: EdgeWeights) -> dict[RelDir, np.ndarray]:
        out = {}
        sd_off = self.graph.offsets[NodeType.SDOH]
        dr_off = self.graph.offsets[NodeType.DRUG]
        for rev in (False, True):
            key = (Relation.DRUG_HAS_SDOH, rev)
            agg = self.aggs.get(key)
            if agg is None:
                continue
            if rev:
                drug, sdoh = agg.dst - dr_off, agg.src
            else:
                drug, sdoh = agg.src, agg.dst - sd_off
            out[key] = weights.lookup(drug, sdoh, np.full(len(agg), int(rev)))
        return out


def check_schema(model: GcnModel, graph: HeteroGraph) -> None:
    if tuple(graph.relations) != model.relations:
        raise SchemaMismatch(f"graph relations {[r.value for r in graph.relations]} "
                             f"!= model relations {[r.value for r in model.relations]}")
    if dict(graph.node_counts) != model.node_counts:
        raise SchemaMismatch(f"graph node counts {graph.node_counts} != model {model.node_counts}")


def encode(model: GcnModel, plan: MessagePlan, params: Mapping[str, ad.Tensor],
           weights: ad.Tensor | None = None,
           weight_index: Mapping[RelDir, np.ndarray] | None = None) -> ad.Tensor:
    """Differentiable forward pass returning the ``(num_nodes, hidden)`` embedding tensor."""
    cfg = model.config
    graph = plan.graph
    h = ad.concat_rows([params[input_name(t)] for t in NODE_TYPES])
    for layer in range(cfg.num_layers):
        by_type = {t: ad.slice_rows(h, graph.offsets[t], graph.offsets[t] + graph.node_counts[t])
                   for t in NODE_TYPES}
        messages = []
        for key, agg in plan.aggs.items():
            if not len(agg):
                continue
            hw = ad.matmul(by_type[plan.src_types[key]], params[weight_name(layer, key)])
            coeff = None
            if weights is not None and weight_index is not None and key in weight_index:
                coeff = ad.edge_scale(agg.coeff, weights, weight_index[key])
            messages.append(ad.spmm(agg, hw, coeff))
        if messages:
            z = ad.add_rowvec(ad.add_n(messages), params[bias_name(layer)])
        else:
            zeros = ad.Tensor(np.zeros((graph.num_nodes, cfg.hidden_dim), dtype=model.dtype))
            z = ad.add_rowvec(zeros, params[bias_name(layer)])
        h = ad.relu(z) if layer < cfg.num_layers - 1 else z
    return h


def param_tensors(model: GcnModel, trainable: bool) -> dict[str, ad.Tensor]:
    return {k: ad.Tensor(v, requires_grad=trainable, name=k) for k, v in model.params.items()}


@dataclass
class EmbeddingTable:
    """Encoder output: one row per node, addressable per type."""

    full: np.ndarray
    offsets: dict[NodeType, int]
    node_counts: dict[NodeType, int]

    def __getitem__(self, t: NodeType) -> np.ndarray:
        t = NodeType(t)
        o = self.offsets[t]
        return self.full[o:o + self.node_counts[t]]


def forward_embeddings(model: GcnModel, graph: HeteroGraph,
                       weights: EdgeWeights | None = None) -> EmbeddingTable:
    check_schema(model, graph)
    plan = MessagePlan.build(graph)
    params = param_tensors(model, trainable=False)
    w = widx = None
    if weights is not None:
        w = ad.Tensor(weights.values.astype(model.dtype).reshape(-1, 1))
        widx = plan.weight_index(weights)
    z = encode(model, plan, params, w, widx)
    return EmbeddingTable(z.data, dict(graph.offsets), dict(graph.node_counts))


def score_edges(embeddings: EmbeddingTable, edges) -> np.ndarray:
    """Raw dot-product scores for ``(drug, disease)`` local-id pairs."""
    pairs = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    drugs, diseases = embeddings[NodeType.DRUG], embeddings[NodeType.DISEASE]
    if len(pairs) and (pairs[:, 0].min() < 0 or pairs[:, 0].max() >= len(drugs)
                       or pairs[:, 1].min() < 0 or pairs[:, 1].max() >= len(diseases)):
        raise IndexOutOfRange("score_edges: node reference out of range")
    return np.einsum("ij,ij->i", drugs[pairs[:, 0]], diseases[pairs[:, 1]])


def score_tensor(z: ad.Tensor, graph: HeteroGraph, drugs, diseases) -> ad.Tensor:
    """Differentiable counterpart of :func:`score_edges` on a full embedding tensor."""
    o_dr, o_ds = graph.offsets[NodeType.DRUG], graph.offsets[NodeType.DISEASE]
    u = ad.slice_rows(z, o_dr, o_dr + graph.node_counts[NodeType.DRUG])
    v = ad.slice_rows(z, o_ds, o_ds + graph.node_counts[NodeType.DISEASE])
    return ad.pair_dot(u, v, drugs, diseases)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = "KGFAIR-CHECKPOINT"
CHECKPOINT_VERSION = 1


def _array_block(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        code = "f8" if arr.dtype.itemsize == 8 else "f4"
    else:
        code = "i8"
    a2 = arr if arr.ndim == 2 else arr.reshape(-1, 1)
    head = f"{name} {code} {a2.shape[0]} {a2.shape[1]}\n".encode()
    return head + np.ascontiguousarray(a2, dtype="<" + code).tobytes()


def checkpoint_bytes(model: GcnModel, weights: EdgeWeights | None = None,
                     extra: Mapping[str, str] | None = None) -> bytes:
    cfg = model.config
    meta = {
        "format_version": str(CHECKPOINT_VERSION),
        "embedding_dim": str(cfg.embedding_dim),
        "hidden_dim": str(cfg.hidden_dim),
        "num_layers": str(cfg.num_layers),
        "seed": str(cfg.seed),
        "relations": ",".join(r.value for r in model.relations),
        "node_counts": ",".join(f"{t.value}:{model.node_counts[t]}" for t in NODE_TYPES),
    }
    for k, v in (extra or {}).items():
        if "\n" in str(v) or "=" in k:
            raise ValueError(f"bad metadata entry {k!r}")
        meta.setdefault(k, str(v))
    arrays = list(model.params.items())
    if weights is not None:
        arrays += [("edge_weights.keys", weights.keys), ("edge_weights.values", weights.values)]
    buf = io.BytesIO()
    buf.write(f"{CHECKPOINT_MAGIC}\n".encode())
    for k, v in meta.items():
        buf.write(f"{k}={v}\n".encode())
    buf.write(f"arrays={len(arrays)}\n\n".encode())
    for name, arr in arrays:
        buf.write(_array_block(name, arr))
    return buf.getvalue()


def save_checkpoint(path: str | os.PathLike, model: GcnModel, weights: EdgeWeights | None = None,
                    extra: Mapping[str, str] | None = None) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model, weights, extra))


def parse_checkpoint(data: bytes) -> tuple[GcnModel, EdgeWeights | None, dict[str, str]]:
    stream = io.BytesIO(data)
    if stream.readline().decode().rstrip("\n") != CHECKPOINT_MAGIC:
        raise ParseError("not a checkpoint file", 1)
    meta: dict[str, str] = {}
    lineno = 1
    while True:
        lineno += 1
        line = stream.readline().decode()
        if not line:
            raise ParseError("truncated header", lineno)
        line = line.rstrip("\n")
        if not line:
            break
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"bad header line {line!r}", lineno)
        meta[key] = value
    if int(meta.get("format_version", -1)) != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {meta.get('format_version')}")
    arrays = {}
    for _ in range(int(meta["arrays"])):
        head = stream.readline().decode().split()
        if len(head) != 4:
            raise ParseError("bad array header")
        name, code, rows, cols = head[0], head[1], int(head[2]), int(head[3])
        dt = np.dtype("<" + code)
        raw = stream.read(rows * cols * dt.itemsize)
        if len(raw) != rows * cols * dt.itemsize:
            raise ParseError(f"truncated array {name}")
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(rows, cols).astype(dt.newbyteorder("="))
    if stream.read():
        raise ParseError("trailing bytes after last array")

    cfg = GcnConfig(int(meta["embedding_dim"]), int(meta["hidden_dim"]), int(meta["num_layers"]), int(meta["seed"]))
    relations = tuple(Relation(r) for r in meta["relations"].split(",") if r)
    counts = {}
    for item in meta["node_counts"].split(","):
        t, _, c = item.partition(":")
        counts[NodeType(t)] = int(c)
    weights = None
    if "edge_weights.keys" in arrays:
        weights = EdgeWeights(arrays.pop("edge_weights.keys"), arrays.pop("edge_weights.values").reshape(-1))
    model = GcnModel(cfg, counts, relations, arrays)
    known = {"format_version", "embedding_dim", "hidden_dim", "num_layers", "seed", "relations", "node_counts", "arrays"}
    return model, weights, {k: v for k, v in meta.items() if k not in known}


def load_checkpoint(path: str | os.PathLike) -> tuple[GcnModel, EdgeWeights | None, dict[str, str]]:
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())
