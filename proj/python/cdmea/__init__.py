"""Multi-modal entity alignment with counterfactual debiasing."""

from ._cdmea import (
    ArgumentError,
    Checkpoint,
    ConfigError,
    DivergenceError,
    Graph,
    GraphPair,
    LoadError,
    ParseError,
    ValidationError,
    __version__,
    causal_scores,
    debias_scores,
    default_config,
    generate,
    infonce_loss,
    load_checkpoint,
    load_dataset,
    metrics,
    rank,
    reflection_matrix,
    split_seeds,
    train,
)

__all__ = [
    "ArgumentError",
    "Checkpoint",
    "ConfigError",
    "DivergenceError",
    "Graph",
    "GraphPair",
    "LoadError",
    "ParseError",
    "ValidationError",
    "__version__",
    "causal_scores",
    "debias_scores",
    "default_config",
    "generate",
    "infonce_loss",
    "load_checkpoint",
    "load_dataset",
    "metrics",
    "rank",
    "reflection_matrix",
    "split_seeds",
    "train",
]
