"""Dynamic directed networks with community structure and reciprocity."""

__version__ = "0.1.0"

from .em import FitResult, fit
from .errors import (DynRecipError, EmptyNetworkError, ParseError, UndefinedAUCError,
                     ValidationError)
from .generator import GeneratorConfig, generate, sample_network
from .model import (Hyperparams, ModelParams, Variant, log_likelihood, regularized_objective,
                    transition_probs)
from .temporal_graph import TemporalNetwork, load_edgelist, preprocess, read_edgelist, reciprocity

__all__ = [
    "FitResult", "fit", "DynRecipError", "EmptyNetworkError", "ParseError",
    "UndefinedAUCError", "ValidationError", "GeneratorConfig", "generate", "sample_network",
    "Hyperparams", "ModelParams", "Variant", "log_likelihood", "regularized_objective",
    "transition_probs", "TemporalNetwork", "load_edgelist", "preprocess", "read_edgelist",
    "reciprocity",
]
