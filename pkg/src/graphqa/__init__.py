"""Multi-hop question answering over knowledge bases.

The pipeline: extract a subgraph around the entities a question mentions,
rewrite relation edges into relation nodes, orient the graph outward from
the seeds by hop distance, then run a gated graph network that scores
every node as answer or non-answer.
"""
from .errors import (ConfigError, DataError, GraphError, GraphQAError,
                     LinkError, NumericsError, ShapeError)
from .estimator import AnswerSelector
from .graph import (AdjacencyView, GraphOptions, ReasoningGraph,
                    add_reverse_edges, build_adjacency,
                    build_reasoning_graph, compute_hop_distances,
                    graph_to_dot, graph_to_json, levi_transform,
                    prune_inside_edges)
from .kb import (KnowledgeBase, QADataset, QAExample, Subgraph, Triple,
                 Vocabulary, extract_subgraph, link_entities, load_kb,
                 load_qa, save_kb, save_qa, tokenize, vocab_from_kb)
from .metrics import MetricsReport, full_metric, hits_at_1
from .model import ModelConfig, build_params, forward, load_word_vectors
from .synthetic import SyntheticSpec, SyntheticTask, generate_synthetic, \
    parse_spec_file
from .training import (AblationReport, TrainConfig, TrainResult, evaluate,
                       run_ablations, train)

__version__ = "0.1.0"

__all__ = [
    "AblationReport", "AdjacencyView", "AnswerSelector", "ConfigError",
    "DataError", "GraphError", "GraphOptions", "GraphQAError",
    "KnowledgeBase", "LinkError", "MetricsReport", "ModelConfig",
    "NumericsError", "QADataset", "QAExample", "ReasoningGraph",
    "ShapeError", "Subgraph", "SyntheticSpec", "SyntheticTask",
    "TrainConfig", "TrainResult", "Triple", "Vocabulary",
    "add_reverse_edges", "build_adjacency", "build_params",
    "build_reasoning_graph", "compute_hop_distances", "evaluate",
    "extract_subgraph", "forward", "full_metric", "generate_synthetic",
    "graph_to_dot", "graph_to_json", "hits_at_1", "levi_transform",
    "link_entities", "load_kb", "load_qa", "load_word_vectors",
    "parse_spec_file", "prune_inside_edges", "run_ablations", "save_kb",
    "save_qa", "tokenize", "train", "vocab_from_kb",
]
