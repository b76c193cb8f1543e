"""
Error hierarchy shared by every wavres module.

Each error carries the process exit code the CLI reports for it:
1 for usage/config problems, 2 for bad data, 3 for numerical divergence.
"""

from typing import Optional


class WavResError(Exception):
    """Base class for all toolkit errors"""

    exit_code: int = 2


class UsageError(WavResError):
    """Bad command line usage"""

    exit_code = 1


class ConfigError(WavResError):
    """Invalid, unknown or missing configuration"""

    exit_code = 1


class ParameterError(WavResError, ValueError):
    """A parameter value outside its admissible range"""


class DimensionError(WavResError, ValueError):
    """Array shapes that do not fit together"""


class DomainError(WavResError, ValueError):
    """Input values outside the mathematical domain of an operation"""


class StatisticsError(WavResError):
    """Not enough samples to form a statistic"""


class StateError(WavResError):
    """An object used in a mode or state it was not prepared for"""


class ReconstructionError(WavResError):
    """Reconstruction impossible with the given data"""


class FormatError(WavResError):
    """Malformed file content; `offset` is the byte position of the defect"""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DivergenceError(WavResError):
    """Non-finite value during an iterative procedure"""

    exit_code = 3

    def __init__(self, message: str, iteration: Optional[int] = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
