"""Counterfactual SDoH bias audits for heterogeneous-GCN drug repurposing."""

from .fairness import AuditConfig, audit_report, build_bias_splits, detect_bias, fit_edge_weights
from .gcn import EdgeWeights, GcnConfig, GcnModel, forward_embeddings, init_model, score_edges
from .graph import HeteroGraph, NodeRef, NodeType, Relation, SdohCategory, build_graph, load_graph
from .linkpred import TrainConfig, evaluate_mrr, train
from .report import BiasReport, ReportRow
from .synth import GenParams, generate, generate_graph

__all__ = [
    "AuditConfig", "audit_report", "build_bias_splits", "detect_bias", "fit_edge_weights",
    "EdgeWeights", "GcnConfig", "GcnModel", "forward_embeddings", "init_model", "score_edges",
    "HeteroGraph", "NodeRef", "NodeType", "Relation", "SdohCategory", "build_graph", "load_graph",
    "TrainConfig", "evaluate_mrr", "train", "BiasReport", "ReportRow",
    "GenParams", "generate", "generate_graph",
]

__version__ = "0.1.0"
