"""Posterior sampling, diagnostics and prediction for occupancy models."""

from .config import PriorConfig, SamplerConfig
from .diagnostics import diagnostics, ess, split_rhat
from .predict import Prediction, predict
from .samplers import FittedModel, fit
from .samples import PosteriorSamples

__all__ = [
    "PriorConfig",
    "SamplerConfig",
    "PosteriorSamples",
    "FittedModel",
    "fit",
    "predict",
    "Prediction",
    "diagnostics",
    "ess",
    "split_rhat",
]
