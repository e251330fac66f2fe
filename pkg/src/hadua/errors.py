"""Exception hierarchy shared by the library and the command line.

Each class carries the process exit code the CLI maps it to.
"""


class HaduaError(Exception):
    exit_code = 1


class ConfigError(HaduaError, ValueError):
    exit_code = 2


class ContractError(HaduaError, ValueError):
    """A documented precondition of an operation was violated."""

    exit_code = 2


class ShapeError(ContractError):
    pass


class DegenerateError(ContractError):
    """Input is valid in form but carries no usable information (e.g. zero variance)."""


class DataIOError(HaduaError, OSError):
    exit_code = 3


class LeakageError(HaduaError):
    """Target-domain labels became reachable by the trainer."""

    exit_code = 4


class NumericError(HaduaError, ArithmeticError):
    """A computation produced NaN or Inf."""

    exit_code = 5
