"""External-memory cognitive maps for small-model reasoning."""

__version__ = "0.1.0"

from .cogmap import CognitiveMap, CognitiveState, TransitionEdge, load_map, save_map
from .embed import RemoteEmbedder, StubEmbedder, cosine, embed_text
from .engine import SolveConfig, batch_eval, evaluate_answer, majority_vote, run_learning_loop, solve
from .navigator import NavigatorModel, decide, extract_training_set, load_model, save_model, train

__all__ = [
    "CognitiveMap", "CognitiveState", "TransitionEdge", "load_map", "save_map",
    "RemoteEmbedder", "StubEmbedder", "cosine", "embed_text",
    "SolveConfig", "batch_eval", "evaluate_answer", "majority_vote", "run_learning_loop", "solve",
    "NavigatorModel", "decide", "extract_training_set", "load_model", "save_model", "train",
]
