"""Conditional GAN engine for grayscale expression synthesis and dataset balancing."""

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DivergenceError,
    EmosynthError,
    ExhaustionError,
    LabelError,
    PlanError,
    ShapeError,
    VerificationError,
)
from .tensor import Parameter, Tape, Tensor, finite_diff_check, set_default_dtype, use_dtype

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DivergenceError",
    "EmosynthError",
    "ExhaustionError",
    "LabelError",
    "Parameter",
    "PlanError",
    "ShapeError",
    "Tape",
    "Tensor",
    "VerificationError",
    "finite_diff_check",
    "set_default_dtype",
    "use_dtype",
    "__version__",
]
