"""Typed heterogeneous graph with SDoH schema, structural edits and TSV IO.

Nodes are identified by ``(node_type, local_id)`` with dense local ids per
type.  Edges are stored per relation as sorted, deduplicated ``(head, tail)``
int64 arrays.  A global index space concatenates the node types in
``NODE_TYPES`` order; it is what the encoder works in.

Degrees follow the undirected-incidence convention across all relations, so
``sum(degrees) == 2 * num_edges``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateEdge,
    EdgeNotFound,
    IndexOutOfRange,
    ParseError,
    TypeConstraintViolation,
    ZeroDegree,
)


class NodeType(str, Enum):
    DRUG = "drug"
    DISEASE = "disease"
    PHENOTYPE = "phenotype"
    SDOH = "sdoh"


NODE_TYPES: tuple[NodeType, ...] = tuple(NodeType)


class Relation(str, Enum):
    DRUG_TREATS_DISEASE = "drug_treats_disease"
    DRUG_HAS_SDOH = "drug_has_sdoh"
    DISEASE_HAS_SDOH = "disease_has_sdoh"
    PHENOTYPE_OF_DRUG = "phenotype_of_drug"
    PHENOTYPE_OF_DISEASE = "phenotype_of_disease"

    @property
    def head_type(self) -> NodeType:
        return _RELATION_TYPES[self][0]

    @property
    def tail_type(self) -> NodeType:
        return _RELATION_TYPES[self][1]


_RELATION_TYPES = {
    Relation.DRUG_TREATS_DISEASE: (NodeType.DRUG, NodeType.DISEASE),
    Relation.DRUG_HAS_SDOH: (NodeType.DRUG, NodeType.SDOH),
    Relation.DISEASE_HAS_SDOH: (NodeType.DISEASE, NodeType.SDOH),
    Relation.PHENOTYPE_OF_DRUG: (NodeType.PHENOTYPE, NodeType.DRUG),
    Relation.PHENOTYPE_OF_DISEASE: (NodeType.PHENOTYPE, NodeType.DISEASE),
}

ALL_RELATIONS: tuple[Relation, ...] = tuple(Relation)


# --------------------------------------------------------------------------
# SDoH schema: five binary categories, three ternary behavioural ones.
# --------------------------------------------------------------------------


class SdohCategory(str, Enum):
    COMMUNITY_PRESENT = "community_present"
    COMMUNITY_ABSENT = "community_absent"
    EDUCATION = "education"
    ECONOMICS = "economics"
    ENVIRONMENT = "environment"
    ALCOHOL_USE = "alcohol_use"
    TOBACCO_USE = "tobacco_use"
    DRUG_USE = "drug_use"


_BINARY = ("true", "false")
_TERNARY = ("present", "past", "never")

SDOH_VALUES: dict[SdohCategory, tuple[str, ...]] = {
    c: (_BINARY if i < 5 else _TERNARY) for i, c in enumerate(SdohCategory)
}

#: Categories audited for bias; behavioural ones stay ordinary structure.
SENSITIVE_CATEGORIES: tuple[SdohCategory, ...] = tuple(SdohCategory)[:5]


@dataclass(frozen=True)
class SdohNode:
    category: SdohCategory
    value: str

    def __post_init__(self):
        if self.value not in SDOH_VALUES[self.category]:
            raise ValueError(f"{self.value!r} is not a value of {self.category.value}")

    @property
    def label(self) -> str:
        return f"{self.category.value}:{self.value}"

    @property
    def local_id(self) -> int:
        return _SDOH_INDEX[self]


SDOH_NODES: tuple[SdohNode, ...] = tuple(
    SdohNode(c, v) for c in SdohCategory for v in SDOH_VALUES[c]
)
_SDOH_INDEX = {node: i for i, node in enumerate(SDOH_NODES)}
_SDOH_BY_LABEL = {node.label: node for node in SDOH_NODES}
NUM_SDOH = len(SDOH_NODES)


def sdoh_node(label: str) -> SdohNode:
    try:
        return _SDOH_BY_LABEL[label]
    except KeyError:
        raise ValueError(f"unknown sdoh label {label!r}") from None


def sensitive_pair(category: SdohCategory | str) -> tuple[int, int]:
    """Local ids of (w0, w1) = (``<cat>:true``, ``<cat>:false``)."""
    category = SdohCategory(category)
    if category not in SENSITIVE_CATEGORIES:
        raise ValueError(f"{category.value} is not a sensitive binary category")
    return (
        SdohNode(category, "true").local_id,
        SdohNode(category, "false").local_id,
    )


# --------------------------------------------------------------------------
# Node and edge references
# --------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class NodeRef:
    node_type: NodeType
    local_id: int


@dataclass(frozen=True)
class EdgeTriple:
    head: NodeRef
    relation: Relation
    tail: NodeRef

    def check_types(self) -> None:
        if self.head.node_type != self.relation.head_type or self.tail.node_type != self.relation.tail_type:
            raise TypeConstraintViolation(
                f"{self.relation.value} connects {self.relation.head_type.value}->"
                f"{self.relation.tail_type.value}, got "
                f"{self.head.node_type.value}->{self.tail.node_type.value}"
            )


def triple(head_type, head_id, relation, tail_type, tail_id) -> EdgeTriple:
    """Shorthand constructor accepting enum values or their strings."""
    return EdgeTriple(
        NodeRef(NodeType(head_type), int(head_id)),
        Relation(relation),
        NodeRef(NodeType(tail_type), int(tail_id)),
    )


# --------------------------------------------------------------------------
# Graph
# --------------------------------------------------------------------------

_EMPTY = np.zeros((0, 2), dtype=np.int64)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class HeteroGraph:
    """Immutable typed multi-relational graph.

    Construct through :func:`build_graph`; edits return new graphs.
    """

    __slots__ = ("node_counts", "relations", "_edges", "offsets", "num_nodes", "degrees")

    def __init__(
        self,
        node_counts: Mapping[NodeType, int],
        edges: Mapping[Relation, np.ndarray],
        relations: Sequence[Relation] = ALL_RELATIONS,
    ):
        counts = {t: int(node_counts.get(t, 0)) for t in NODE_TYPES}
        if counts[NodeType.SDOH] > NUM_SDOH:
            raise IndexOutOfRange(f"at most {NUM_SDOH} sdoh nodes exist, got {counts[NodeType.SDOH]}")
        if any(c < 0 for c in counts.values()):
            raise IndexOutOfRange("negative node count")
        rels = tuple(Relation(r) for r in relations)
        store = {}
        for rel in rels:
            arr = np.asarray(edges.get(rel, _EMPTY), dtype=np.int64).reshape(-1, 2)
            if len(arr):
                _check_bounds(arr, rel, counts)
                arr = np.unique(arr, axis=0)
            store[rel] = _freeze(np.ascontiguousarray(arr))
        extra = set(edges) - set(rels)
        if any(len(edges[r]) for r in extra):
            raise TypeConstraintViolation(f"edges given for relations outside the schema: {sorted(r.value for r in extra)}")

        offsets, acc = {}, 0
        for t in NODE_TYPES:
            offsets[t] = acc
            acc += counts[t]
        deg = np.zeros(acc, dtype=np.int64)
        for rel, arr in store.items():
            if len(arr):
                np.add.at(deg, arr[:, 0] + offsets[rel.head_type], 1)
                np.add.at(deg, arr[:, 1] + offsets[rel.tail_type], 1)

        self.node_counts = counts
        self.relations = rels
        self._edges = store
        self.offsets = offsets
        self.num_nodes = acc
        self.degrees = _freeze(deg)

    # -- queries ----------------------------------------------------------

    def edges(self, relation: Relation) -> np.ndarray:
        """Read-only ``(m, 2)`` array of local ``(head, tail)`` ids."""
        return self._edges[Relation(relation)]

    @property
    def num_edges(self) -> int:
        return sum(len(a) for a in self._edges.values())

    def triples(self) -> list[EdgeTriple]:
        out = []
        for rel, arr in self._edges.items():
            ht, tt = rel.head_type, rel.tail_type
            out.extend(EdgeTriple(NodeRef(ht, int(h)), rel, NodeRef(tt, int(t))) for h, t in arr)
        return out

    def has_edge(self, edge: EdgeTriple) -> bool:
        arr = self._edges.get(edge.relation)
        if arr is None or not len(arr):
            return False
        ntail = max(self.node_counts[edge.relation.tail_type], 1)
        keys = arr[:, 0] * ntail + arr[:, 1]
        key = edge.head.local_id * ntail + edge.tail.local_id
        i = np.searchsorted(keys, key)
        return bool(i < len(keys) and keys[i] == key)

    def global_index(self, ref: NodeRef) -> int:
        self._check_ref(ref)
        return self.offsets[ref.node_type] + ref.local_id

    def _check_ref(self, ref: NodeRef) -> None:
        if not 0 <= ref.local_id < self.node_counts[ref.node_type]:
            raise IndexOutOfRange(f"{ref.node_type.value} {ref.local_id} out of range "
                                  f"(count {self.node_counts[ref.node_type]})")

    def neighbors(self, relation: Relation, node: int, reverse: bool = False) -> np.ndarray:
        """Local ids adjacent to ``node`` via ``relation`` (tails, or heads if reverse)."""
        arr = self._edges[relation]
        col, other = (1, 0) if reverse else (0, 1)
        return arr[arr[:, col] == node, other]

    def __eq__(self, other):
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (
            self.node_counts == other.node_counts
            and self.relations == other.relations
            and all(np.array_equal(self._edges[r], other._edges[r]) for r in self.relations)
        )

    def __hash__(self):
        return id(self)

    def __repr__(self):
        counts = ", ".join(f"{t.value}={c}" for t, c in self.node_counts.items())
        return f"HeteroGraph({counts}; edges={self.num_edges})"


def _check_bounds(arr: np.ndarray, rel: Relation, counts: Mapping[NodeType, int]) -> None:
    for col, t in ((0, rel.head_type), (1, rel.tail_type)):
        ids = arr[:, col]
        if ids.min() < 0 or ids.max() >= counts[t]:
            bad = ids[(ids < 0) | (ids >= counts[t])][0]
            raise IndexOutOfRange(f"{rel.value}: {t.value} id {int(bad)} out of range (count {counts[t]})")


def _triples_to_arrays(triples: Iterable[EdgeTriple]) -> dict[Relation, np.ndarray]:
    buckets: dict[Relation, list[tuple[int, int]]] = {}
    for e in triples:
        e.check_types()
        buckets.setdefault(e.relation, []).append((e.head.local_id, e.tail.local_id))
    return {r: np.array(v, dtype=np.int64).reshape(-1, 2) for r, v in buckets.items()}


def build_graph(
    triples: Iterable[EdgeTriple],
    node_counts: Mapping[NodeType | str, int],
    relations: Sequence[Relation] = ALL_RELATIONS,
) -> HeteroGraph:
    """Validate triples, drop duplicates and index the result."""
    counts = {NodeType(t): int(c) for t, c in node_counts.items()}
    arrays = _triples_to_arrays(triples)
    missing = set(arrays) - set(relations)
    if missing:
        raise TypeConstraintViolation(f"relations not in schema: {sorted(r.value for r in missing)}")
    return HeteroGraph(counts, arrays, relations)


def degree(graph: HeteroGraph, node: NodeRef) -> int:
    return int(graph.degrees[graph.global_index(node)])


def normalization_coefficient(graph: HeteroGraph, j: NodeRef, i: NodeRef) -> float:
    """``sqrt(deg j) * sqrt(deg i)``."""
    dj, di = degree(graph, j), degree(graph, i)
    if dj == 0 or di == 0:
        raise ZeroDegree(f"zero degree on {j if dj == 0 else i}")
    return math.sqrt(dj) * math.sqrt(di)


def _pair_keys(arr: np.ndarray, ntail: int) -> np.ndarray:
    return arr[:, 0] * max(ntail, 1) + arr[:, 1]


def mask_pairs(graph: HeteroGraph, relation: Relation, pairs: np.ndarray) -> HeteroGraph:
    """Array form of :func:`mask_edges` for a single relation."""
    relation = Relation(relation)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if not len(pairs):
        return graph
    if relation not in graph.relations:
        raise EdgeNotFound(f"relation {relation.value} not in graph")
    ntail = graph.node_counts[relation.tail_type]
    current = graph.edges(relation)
    have = _pair_keys(current, ntail)
    drop = _pair_keys(pairs, ntail)
    present = np.isin(drop, have)
    if not present.all():
        h, t = pairs[~present][0]
        raise EdgeNotFound(f"({relation.head_type.value} {h}, {relation.value}, {relation.tail_type.value} {t}) not in graph")
    edges = dict(graph._edges)
    edges[relation] = current[~np.isin(have, drop)]
    return HeteroGraph(graph.node_counts, edges, graph.relations)


def attach_pairs(graph: HeteroGraph, relation: Relation, pairs: np.ndarray) -> HeteroGraph:
    """Array form of :func:`attach_edges` for a single relation."""
    relation = Relation(relation)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if not len(pairs):
        return graph
    if relation not in graph.relations:
        raise TypeConstraintViolation(f"relation {relation.value} not in graph schema")
    _check_bounds(pairs, relation, graph.node_counts)
    ntail = graph.node_counts[relation.tail_type]
    current = graph.edges(relation)
    new = _pair_keys(pairs, ntail)
    if len(np.unique(new)) != len(new):
        raise DuplicateEdge("edge listed twice in attach request")
    clash = np.isin(new, _pair_keys(current, ntail))
    if clash.any():
        h, t = pairs[clash][0]
        raise DuplicateEdge(f"({relation.head_type.value} {h}, {relation.value}, {relation.tail_type.value} {t}) already present")
    edges = dict(graph._edges)
    edges[relation] = np.concatenate([current, pairs])
    return HeteroGraph(graph.node_counts, edges, graph.relations)


def mask_edges(graph: HeteroGraph, edges: Sequence[EdgeTriple]) -> HeteroGraph:
    for rel, arr in _triples_to_arrays(edges).items():
        graph = mask_pairs(graph, rel, arr)
    return graph


def attach_edges(graph: HeteroGraph, edges: Sequence[EdgeTriple]) -> HeteroGraph:
    arrays = _triples_to_arrays(edges)
    for rel, arr in arrays.items():
        graph = attach_pairs(graph, rel, arr)
    return graph


# --------------------------------------------------------------------------
# TSV edge lists
# --------------------------------------------------------------------------

TSV_HEADER = "head_type\thead_id\trelation\ttail_type\ttail_id"


def sidecar_path(path: str | os.PathLike) -> str:
    return os.fspath(path) + ".nodes.json"


def _format_id(node_type: NodeType, local_id: int) -> str:
    if node_type is NodeType.SDOH:
        return SDOH_NODES[local_id].label
    return str(local_id)


def _parse_id(node_type: NodeType, text: str, lineno: int) -> int:
    if node_type is NodeType.SDOH:
        node = _SDOH_BY_LABEL.get(text)
        if node is None:
            raise ParseError(f"unknown sdoh id {text!r}", lineno)
        return node.local_id
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"bad {node_type.value} id {text!r}", lineno) from None
    if value < 0:
        raise ParseError(f"negative {node_type.value} id {value}", lineno)
    return value


def edge_list_lines(graph: HeteroGraph) -> list[str]:
    lines = []
    for rel in graph.relations:
        ht, tt = rel.head_type, rel.tail_type
        for h, t in graph.edges(rel):
            lines.append(f"{ht.value}\t{_format_id(ht, int(h))}\t{rel.value}\t{tt.value}\t{_format_id(tt, int(t))}")
    lines.sort()
    return lines


def save_edge_list(graph: HeteroGraph, path: str | os.PathLike) -> None:
    """Write sorted TSV lines plus a ``.nodes.json`` sidecar with counts and schema."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(TSV_HEADER + "\n")
        for line in edge_list_lines(graph):
            f.write(line + "\n")
    meta = {
        "node_counts": {t.value: graph.node_counts[t] for t in NODE_TYPES},
        "relations": [r.value for r in graph.relations],
    }
    with open(sidecar_path(path), "w", encoding="utf-8", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_edge_list(path: str | os.PathLike) -> tuple[list[EdgeTriple], dict[NodeType, int]]:
    """Parse a TSV edge list.

    Node counts come from the sidecar when present, otherwise from the
    largest id seen per type (sdoh always has the full schema).
    """
    triples: list[EdgeTriple] = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\r\n")
        if header != TSV_HEADER:
            raise ParseError(f"expected header {TSV_HEADER!r}, got {header!r}", 1)
        for lineno, raw in enumerate(f, start=2):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ParseError(f"expected 5 tab-separated fields, got {len(fields)}", lineno)
            try:
                ht, rel, tt = NodeType(fields[0]), Relation(fields[2]), NodeType(fields[3])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            e = EdgeTriple(NodeRef(ht, _parse_id(ht, fields[1], lineno)), rel,
                           NodeRef(tt, _parse_id(tt, fields[4], lineno)))
            try:
                e.check_types()
            except TypeConstraintViolation as exc:
                raise TypeConstraintViolation(f"line {lineno}: {exc}") from None
            triples.append(e)

    side = sidecar_path(path)
    if os.path.exists(side):
        with open(side, encoding="utf-8") as f:
            meta = json.load(f)
        counts = {NodeType(k): int(v) for k, v in meta["node_counts"].items()}
    else:
        counts = {t: 0 for t in NODE_TYPES}
        for e in triples:
            for ref in (e.head, e.tail):
                counts[ref.node_type] = max(counts[ref.node_type], ref.local_id + 1)
        counts[NodeType.SDOH] = NUM_SDOH
    return triples, counts


def load_graph(path: str | os.PathLike) -> HeteroGraph:
    triples, counts = load_edge_list(path)
    relations = ALL_RELATIONS
    side = sidecar_path(path)
    if os.path.exists(side):
        with open(side, encoding="utf-8") as f:
            relations = tuple(Relation(r) for r in json.load(f).get("relations", [r.value for r in ALL_RELATIONS]))
    return build_graph(triples, counts, relations)
