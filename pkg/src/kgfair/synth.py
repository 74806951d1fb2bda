"""Seeded SDoH-schema graph generator with an optional planted bias.

Drugs, diseases and phenotypes are split into equal-sized latent
communities.  Treats- and phenotype-edges are denser inside a community, with
the within/between rates chosen so the mean rate over all pairs equals the
relation's base probability.  This gives the link predictor learnable
structure.  SDoH edges are drawn independently at their base rates.

For the planted category a fixed fraction of drugs is left free, and the rest
are split evenly between ``<cat>:true`` (w0) and ``<cat>:false`` (w1).  Treats
probabilities into a designated disease block are multiplied by ``1 + beta``
for w0-attached drugs and by ``1 - beta`` for w1-attached drugs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import InvalidParams
from .graph import (
    ALL_RELATIONS,
    NUM_SDOH,
    SENSITIVE_CATEGORIES,
    HeteroGraph,
    NodeType,
    Relation,
    SdohCategory,
    save_edge_list,
    sensitive_pair,
)


@dataclass(frozen=True)
class GenParams:
    n_drugs: int = 500
    n_diseases: int = 300
    n_phenotypes: int = 200
    p_treats: float = 0.02
    p_drug_sdoh: float = 0.35
    p_disease_sdoh: float = 0.10
    p_phenotype_drug: float = 0.03
    p_phenotype_disease: float = 0.03
    include_disease_sdoh: bool = True
    n_communities: int = 20
    community_mix: float = 0.8
    planted_category: str | None = "economics"
    bias_strength: float = 0.9
    free_fraction: float = 0.2
    block_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> "GenParams":
        for name in ("n_drugs", "n_diseases", "n_phenotypes", "n_communities"):
            if getattr(self, name) < 1:
                raise InvalidParams(f"{name} must be >= 1")
        for name in ("p_treats", "p_drug_sdoh", "p_disease_sdoh", "p_phenotype_drug",
                     "p_phenotype_disease", "community_mix", "bias_strength", "block_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParams(f"{name}={v} outside [0, 1]")
        if not 0.0 < self.free_fraction < 1.0:
            raise InvalidParams(f"free_fraction={self.free_fraction} outside (0, 1)")
        if self.planted_category is not None:
            try:
                cat = SdohCategory(self.planted_category)
            except ValueError:
                raise InvalidParams(f"unknown planted_category {self.planted_category!r}") from None
            if cat not in SENSITIVE_CATEGORIES:
                raise InvalidParams(f"planted_category must be binary, got {cat.value}")
        c = self.n_communities
        for name in ("p_treats", "p_phenotype_drug", "p_phenotype_disease"):
            p_in, _ = self.community_rates(getattr(self, name))
            boost = 1 + self.bias_strength if name == "p_treats" else 1.0
            if p_in * boost > 1.0:
                raise InvalidParams(f"{name} too large for {c} communities at mix {self.community_mix}")
        return self

    def community_rates(self, p: float) -> tuple[float, float]:
        """(within, between) probabilities whose pair-average is ``p``."""
        c = self.n_communities
        if c == 1:
            return p, p
        return p * c * self.community_mix, p * c * (1 - self.community_mix) / (c - 1)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class GeneratedGraph:
    graph: HeteroGraph
    params: GenParams
    free_drugs: np.ndarray
    w0_drugs: np.ndarray
    w1_drugs: np.ndarray
    block: np.ndarray
    communities: dict[NodeType, np.ndarray]


def _balanced(rng: np.random.Generator, n: int, c: int) -> np.ndarray:
    return rng.permutation(np.arange(n) % c)


def _community_edges(rng, comm_a, comm_b, p, params, scale=None) -> np.ndarray:
    p_in, p_out = params.community_rates(p)
    prob = np.where(comm_a[:, None] == comm_b[None, :], p_in, p_out)
    if scale is not None:
        prob = prob * scale
    hit = rng.random(prob.shape) < prob
    return np.argwhere(hit).astype(np.int64)


def generate(params: GenParams) -> GeneratedGraph:
    """Generate a graph plus the ground truth of the planted structure."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    nd, ns, nph = params.n_drugs, params.n_diseases, params.n_phenotypes
    comm = {
        NodeType.DRUG: _balanced(rng, nd, params.n_communities),
        NodeType.DISEASE: _balanced(rng, ns, params.n_communities),
        NodeType.PHENOTYPE: _balanced(rng, nph, params.n_communities),
    }
    block = np.sort(rng.choice(ns, size=math.ceil(params.block_fraction * ns), replace=False))

    drug_sdoh = rng.random((nd, NUM_SDOH)) < params.p_drug_sdoh
    scale = np.ones((nd, ns))
    free = w0_drugs = w1_drugs = np.zeros(0, dtype=np.int64)
    if params.planted_category is not None:
        w0, w1 = sensitive_pair(params.planted_category)
        n_free = math.ceil(params.free_fraction * nd)
        order = rng.permutation(nd)
        free = np.sort(order[:n_free])
        attached = order[n_free:]
        half = (len(attached) + 1) // 2
        w0_drugs, w1_drugs = np.sort(attached[:half]), np.sort(attached[half:])
        drug_sdoh[:, [w0, w1]] = False
        drug_sdoh[w0_drugs, w0] = True
        drug_sdoh[w1_drugs, w1] = True
        scale[np.ix_(w0_drugs, block)] = 1 + params.bias_strength
        scale[np.ix_(w1_drugs, block)] = 1 - params.bias_strength

    edges = {
        Relation.DRUG_TREATS_DISEASE: _community_edges(
            rng, comm[NodeType.DRUG], comm[NodeType.DISEASE], params.p_treats, params, scale),
        Relation.DRUG_HAS_SDOH: np.argwhere(drug_sdoh).astype(np.int64),
    }
    disease_sdoh = rng.random((ns, NUM_SDOH)) < params.p_disease_sdoh
    relations = ALL_RELATIONS
    if params.include_disease_sdoh:
        edges[Relation.DISEASE_HAS_SDOH] = np.argwhere(disease_sdoh).astype(np.int64)
    else:
        relations = tuple(r for r in ALL_RELATIONS if r is not Relation.DISEASE_HAS_SDOH)
    edges[Relation.PHENOTYPE_OF_DRUG] = _community_edges(
        rng, comm[NodeType.PHENOTYPE], comm[NodeType.DRUG], params.p_phenotype_drug, params)
    edges[Relation.PHENOTYPE_OF_DISEASE] = _community_edges(
        rng, comm[NodeType.PHENOTYPE], comm[NodeType.DISEASE], params.p_phenotype_disease, params)

    counts = {NodeType.DRUG: nd, NodeType.DISEASE: ns, NodeType.PHENOTYPE: nph, NodeType.SDOH: NUM_SDOH}
    graph = HeteroGraph(counts, edges, relations)
    return GeneratedGraph(graph, params, free, w0_drugs, w1_drugs, block, comm)


def generate_graph(params: GenParams) -> HeteroGraph:
    return generate(params).graph


def params_sidecar_path(path: str | os.PathLike) -> str:
    return os.fspath(path) + ".params.json"


def write_generated(params: GenParams, path: str | os.PathLike) -> HeteroGraph:
    """Generate, then write the TSV edge list and the params JSON sidecar."""
    graph = generate_graph(params)
    save_edge_list(graph, path)
    with open(params_sidecar_path(path), "w", encoding="utf-8", newline="\n") as f:
        f.write(params.to_json())
    return graph


