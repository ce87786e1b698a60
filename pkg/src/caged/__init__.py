"""Popularity debiasing for graph recommenders via ELBO-estimated aggregation weights."""
from .data import IndexedDataset, RawInteraction, binarize, load_interactions, split
from .graph import (AggregationMatrix, InteractionGraph, build_graph, history_likelihood,
                    normalized_adjacency, normalizer, spmm)
from .trainer import DivergenceError, TrainConfig, momentum_update, run

__all__ = [
    "AggregationMatrix", "DivergenceError", "IndexedDataset", "InteractionGraph",
    "RawInteraction", "TrainConfig", "binarize", "build_graph", "history_likelihood",
    "load_interactions", "momentum_update", "normalized_adjacency", "normalizer", "run",
    "spmm", "split",
]
