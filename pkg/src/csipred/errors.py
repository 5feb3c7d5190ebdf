"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent or infeasible."""


class UndefinedMetricError(ValueError):
    """The requested metric is undefined for the given data (e.g. zero target energy)."""


class MeasurementError(RuntimeError):
    """A timing measurement cannot be trusted (timer resolution too coarse)."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible with the model."""
