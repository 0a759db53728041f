from __future__ import annotations

from typing import Optional


class ImpedanceEngineError(Exception):
    """
    Base class for every error raised by the impedance engine.
    """


class ShapeError(ImpedanceEngineError, ValueError):
    pass


class NonFiniteError(ImpedanceEngineError, ArithmeticError):
    pass


class ConfigError(ImpedanceEngineError, ValueError):
    pass


class InvalidImpedanceError(ImpedanceEngineError, ValueError):
    pass


class ZeroVarianceError(ImpedanceEngineError, ValueError):
    pass


class ExtentMismatchError(ImpedanceEngineError, ValueError):
    pass


class SectionFormatError(ImpedanceEngineError):
    pass


class SectionTruncatedError(ImpedanceEngineError):
    pass


class CheckpointFormatError(ImpedanceEngineError):
    pass


class CheckpointVersionError(ImpedanceEngineError):
    pass


class NonDeterministicError(ImpedanceEngineError):
    pass


class EmptySplitError(ImpedanceEngineError, ValueError):
    pass


class GradientCheckSetupError(ImpedanceEngineError, ArithmeticError):
    pass


class TrainingDivergedError(ImpedanceEngineError, ArithmeticError):
    """
    Raised when the training loss stops being finite.

    epoch:       zero-based epoch at which the problem surfaced
    trace_index: dataset index of the first offending training trace, when known
    """

    def __init__(self, epoch: int, trace_index: Optional[int], detail: str = "") -> None:
        self.epoch = epoch
        self.trace_index = trace_index
        where = f"trace {trace_index}" if trace_index is not None else "unknown trace"
        message = f"Non-finite loss at epoch {epoch} ({where})"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


# Exit-code contract shared by the CLI.
EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def exit_code_for(exc: BaseException) -> int:
    """Map an engine error to the CLI exit code."""
    if isinstance(exc, (NonFiniteError, TrainingDivergedError, GradientCheckSetupError)):
        return EXIT_NUMERIC
    return EXIT_INPUT


__all__ = [
    "ImpedanceEngineError",
    "ShapeError",
    "NonFiniteError",
    "ConfigError",
    "InvalidImpedanceError",
    "ZeroVarianceError",
    "ExtentMismatchError",
    "SectionFormatError",
    "SectionTruncatedError",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "NonDeterministicError",
    "EmptySplitError",
    "GradientCheckSetupError",
    "TrainingDivergedError",
    "EXIT_OK",
    "EXIT_INPUT",
    "EXIT_NUMERIC",
    "exit_code_for",
]
