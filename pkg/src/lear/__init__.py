"""Label-aware span extraction with a from-scratch numpy autodiff engine."""
from .data import Corpus, LabelFile, Record, Span, SynthSpec, few_shot_sample, load_corpus, synth_corpus
from .decoding import SpanPrediction, heuristic_match, nearest_match, nested_decode
from .errors import (ConfigError, ContractError, DegenerateError, DivergenceError, InsufficientDataError,
                     LearError, ShapeError, StaleCacheError, ValidationError)
from .metrics import EvalReport, evaluate
from .model import LabelCache, LearModel, ModelConfig
from .training import TrainConfig, gradcheck, gradcheck_model, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "Corpus", "DegenerateError", "DivergenceError", "EvalReport",
    "InsufficientDataError", "LabelCache", "LabelFile", "LearError", "LearModel", "ModelConfig", "Record",
    "ShapeError", "Span", "SpanPrediction", "StaleCacheError", "SynthSpec", "TrainConfig", "ValidationError",
    "evaluate", "few_shot_sample", "gradcheck", "gradcheck_model", "heuristic_match", "load_corpus",
    "nearest_match", "nested_decode", "synth_corpus", "train",
]
