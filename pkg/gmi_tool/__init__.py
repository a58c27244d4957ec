"""
High-level exports for the GMI graph embedding package.
"""

from .config import GmiConfig, RunConfig, TrainConfig, load_config
from .graph import Graph, load_citation_dataset, remove_edges
from .pipeline import GmiPipeline
from .trainer import train

__all__ = [
    "GmiConfig",
    "GmiPipeline",
    "Graph",
    "RunConfig",
    "TrainConfig",
    "load_citation_dataset",
    "load_config",
    "remove_edges",
    "train",
]
