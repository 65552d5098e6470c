"""Recognizing textual entailment with LSTM conditional encoding and attention.

Built on a small tape-based reverse-mode autodiff over numpy.
"""

from .data import LABELS, Example, SynthSpec, gen_synth, parse_snli, tokenize
from .model import VARIANTS, EntailmentModel, ModelConfig, build_model, count_params
from .training import TrainConfig, evaluate, grid_search, train

__version__ = "0.1.0"

__all__ = [
    "LABELS",
    "VARIANTS",
    "EntailmentModel",
    "Example",
    "ModelConfig",
    "SynthSpec",
    "TrainConfig",
    "build_model",
    "count_params",
    "evaluate",
    "gen_synth",
    "grid_search",
    "parse_snli",
    "tokenize",
    "train",
]
