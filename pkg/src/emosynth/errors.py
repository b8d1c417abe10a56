"""Exception types shared across the engine.

The CLI maps these onto stable exit codes: configuration problems exit 2,
data and checkpoint problems exit 3, numeric divergence and sampler
exhaustion exit 4.
"""


class EmosynthError(Exception):
    """Base class for all engine errors."""


class ShapeError(EmosynthError):
    """Tensor dimensions do not satisfy an operation's contract."""


class ContractError(EmosynthError):
    """An operation precondition was violated (non-shape)."""


class LabelError(EmosynthError):
    """An emotion label is outside the supported class range."""


class ConfigError(EmosynthError):
    """A run configuration value or key is invalid."""


class DataError(EmosynthError):
    """A dataset file could not be parsed or decoded."""


class CheckpointError(EmosynthError):
    """A checkpoint archive is malformed or does not match the target network."""


class PlanError(EmosynthError):
    """An augmentation plan is infeasible (targets below current counts)."""


class ExhaustionError(EmosynthError):
    """The filtered sampler hit its draw budget before producing enough samples."""

    def __init__(self, message: str, drawn: int = 0, accepted: int = 0):
        super().__init__(message)
        self.drawn = drawn
        self.accepted = accepted


class DivergenceError(EmosynthError):
    """Training produced a non-finite loss."""


class VerificationError(EmosynthError):
    """The finite-difference oracle could not evaluate (non-finite output)."""
