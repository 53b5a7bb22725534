"""Hybrid-membership latent distance models for unsigned and signed networks."""
__version__ = "0.1.0"

from .estimators import HMLDM, SignedHMLDM
from .evaluation import EvalReport, evaluate, signed_tasks
from .graph import (DisconnectedGraphError, EdgeListError, Graph, TrainSplit,
                    load_edge_list, make_split)
from .model import LatentState, ModelConfig
from .train import DivergenceError, fit, fit_best

__all__ = [
    "__version__",
    "HMLDM",
    "SignedHMLDM",
    "Graph",
    "TrainSplit",
    "EdgeListError",
    "DisconnectedGraphError",
    "DivergenceError",
    "LatentState",
    "ModelConfig",
    "EvalReport",
    "load_edge_list",
    "make_split",
    "fit",
    "fit_best",
    "evaluate",
    "signed_tasks",
]
