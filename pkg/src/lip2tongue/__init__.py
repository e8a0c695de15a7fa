"""Reconstruct ultrasound tongue images from lip video.

A two-stream CNN reads raw lip clips and their Horn-Schunck optical flow, an
LSTM carries the fused features across time, and a scalar attention gate
scales each step before a dense decoder emits the ultrasound frame. Everything
runs on numpy with a small reverse-mode autodiff core.
"""

from .config import RunConfig, load_config
from .errors import (
    BoundsError, ConfigError, DimensionError, Lip2TongueError, NonFiniteError, TrainingDivergedError, UsageError,
)
from .flow import FlowField, horn_schunck
from .metrics import cw_ssim, extract_contour, msd, ssim
from .model import ModelConfig, forward_sequence, init_params
from .synth import SynthSpec, gen_dataset
from .tensor import Tensor, no_grad, precision
from .training import ablate, evaluate, split_dataset, train

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "BoundsError", "ConfigError", "DimensionError", "Lip2TongueError", "NonFiniteError",
    "TrainingDivergedError", "UsageError", "FlowField", "horn_schunck", "cw_ssim", "extract_contour", "msd", "ssim",
    "ModelConfig", "forward_sequence", "init_params", "SynthSpec", "gen_dataset", "Tensor", "no_grad", "precision",
    "ablate", "evaluate", "split_dataset", "train",
]
