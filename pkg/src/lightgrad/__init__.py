"""Lightweight diffusion acoustic model: separable U-Net decoder, fast ODE sampling, streaming."""

from .diffusion import NoiseSchedule, diffusion_loss, forward_sample, lambda_inverse, schedule_eval
from .errors import (AlignmentError, CheckpointError, ConfigError, DomainError, FormatError,
                     LightGradError, PlanningError, ShapeError, VocabularyError)
from .model import LightGrad
from .samplers import SamplerConfig, make_grid, sample
from .unet import ScoreUNet, UNetConfig

__all__ = [
    "AlignmentError", "CheckpointError", "ConfigError", "DomainError", "FormatError",
    "LightGrad", "LightGradError", "NoiseSchedule", "PlanningError", "SamplerConfig",
    "ScoreUNet", "ShapeError", "UNetConfig", "VocabularyError", "diffusion_loss",
    "forward_sample", "lambda_inverse", "make_grid", "sample", "schedule_eval",
]
