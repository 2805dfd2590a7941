"""Hyperedge interaction-aware hypergraph neural network (HeIHNN) in numpy."""

__version__ = "0.1.0"

from .data import Dataset, knn_hypergraph, load_dataset, neighbor_hypergraph, synth_generate
from .hor import HorConfig, cosine_similarity, hor_mask
from .hypergraph import (Hypergraph, build_hypergraph, interaction_adjacency,
                         normalized_interaction_with_self_loop, structure_stats)
from .model import HeIHNN, ModelConfig
from .propagation import LayerParameters, StageConfig, heihnn_layer, hgnn_layer
from .training import TrainConfig, evaluate, pgd_perturb, sweep, train

__all__ = [
    "Dataset", "HeIHNN", "HorConfig", "Hypergraph", "LayerParameters", "ModelConfig",
    "StageConfig", "TrainConfig", "build_hypergraph", "cosine_similarity", "evaluate",
    "heihnn_layer", "hgnn_layer", "hor_mask", "interaction_adjacency", "knn_hypergraph",
    "load_dataset", "neighbor_hypergraph", "normalized_interaction_with_self_loop",
    "pgd_perturb", "structure_stats", "sweep", "synth_generate", "train",
]
