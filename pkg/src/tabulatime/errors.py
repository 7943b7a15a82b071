"""Exception hierarchy shared by every tabulatime module."""


class TabulaTimeError(Exception):
    """Base class for all errors raised by tabulatime."""


class DimensionError(TabulaTimeError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TabulaTimeError, ValueError):
    """A precondition of an operation was violated."""


class DataError(TabulaTimeError, ValueError):
    """Input data is malformed, missing or out of coverage."""


class StateError(TabulaTimeError, RuntimeError):
    """An object was used before the state it needs was established."""


class NonFiniteError(TabulaTimeError, ArithmeticError):
    """A NaN or Inf appeared at an op boundary while checked mode was on."""


class TrainingError(TabulaTimeError, RuntimeError):
    """Optimisation diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class EvaluationError(TabulaTimeError, ValueError):
    """A metric could not be computed on the given data."""


class FormatError(TabulaTimeError, ValueError):
    """A serialized model bundle is corrupt or has an unsupported version."""
