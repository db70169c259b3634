"""Frequency, spatial and temporal attention network for multichannel signal classification."""

from .config import ConfigError, ModelConfig, tiny_config
from .data import Dataset, SynthSpec, load_dataset, make_splits, save_dataset, synth_generate
from .estimator import DFaSTClassifier
from .metrics import MetricsReport, compute_metrics
from .model import DFaST, load_state, parameter_count, save_state
from .tensor import Tensor, no_grad
from .training import Adam, TrainConfig, cosine_schedule, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ConfigError",
    "DFaST",
    "DFaSTClassifier",
    "Dataset",
    "MetricsReport",
    "ModelConfig",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "compute_metrics",
    "cosine_schedule",
    "load_dataset",
    "load_state",
    "make_splits",
    "no_grad",
    "parameter_count",
    "save_dataset",
    "save_state",
    "synth_generate",
    "tiny_config",
    "train",
]
