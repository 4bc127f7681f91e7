"""nilmkit: non-intrusive load monitoring toolkit.

A desk-scale pipeline for energy disaggregation: a minimal float64
autodiff core, a multi-head dilated-convolution network with attention
pooling and on/off gating, a voltage-aware appliance simulator, training
and evaluation engines, and a CLI tying them together.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    DivergenceError,
    IngestionError,
    NilmError,
    ScenarioError,
    SizeError,
    UsageError,
)
from .tensor import Tensor

__all__ = [
    "Tensor",
    "NilmError",
    "DimensionError",
    "SizeError",
    "UsageError",
    "ConfigError",
    "ScenarioError",
    "IngestionError",
    "CheckpointError",
    "DivergenceError",
    "__version__",
]
