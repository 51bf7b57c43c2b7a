"""Bayesian binary neural networks on simulated spintronic compute-in-memory crossbars."""

from .errors import (BatchStatisticsError, ConfigError, DimensionError, DivergenceError, DomainError,
                     NumericError, ParseError)
from .model import BayesNet, DeviceSetup, EventCounts, LayerSpec, MethodParams, ModelSpec, build_model_spec
from .rng import SeedTree
from .tensor import Parameter, Tensor

__version__ = "0.1.0"

__all__ = ["BayesNet", "DeviceSetup", "EventCounts", "LayerSpec", "MethodParams", "ModelSpec",
           "build_model_spec", "SeedTree", "Tensor", "Parameter", "DimensionError", "DomainError",
           "NumericError", "BatchStatisticsError", "ParseError", "ConfigError", "DivergenceError"]
