"""GSABT: graph sparse attention + bidirectional TCN for multimodal traffic forecasting."""

__version__ = "0.1.0"

from .data import (ModalitySpec, MultimodalGraph, Normalizer, SynthConfig, SynthModality, WindowedDataset,
                   extend_graphs, fit_normalizer, grid_adjacency, make_windows, synth_generate)
from .model import Checkpoint, ModelConfig, forward, init_params, load_checkpoint, save_checkpoint
from .tensor import Tensor
from .training import MetricsReport, TrainConfig, evaluate, mae_loss, metrics, train

__all__ = [
    "Checkpoint", "MetricsReport", "ModalitySpec", "ModelConfig", "MultimodalGraph", "Normalizer",
    "SynthConfig", "SynthModality", "Tensor", "TrainConfig", "WindowedDataset", "evaluate",
    "extend_graphs", "fit_normalizer", "forward", "grid_adjacency", "init_params", "load_checkpoint",
    "mae_loss", "make_windows", "metrics", "save_checkpoint", "synth_generate", "train",
]
