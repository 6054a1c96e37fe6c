"""Exception hierarchy.

Every error raised on purpose derives from :class:`CttxError`; the CLI maps
the subclasses onto exit codes.
"""


class CttxError(Exception):
    exit_code = 1


class ParameterError(CttxError, ValueError):
    """Invalid model or algorithm parameter."""

    exit_code = 2


class ContractError(CttxError, ValueError):
    """Input violates an operation's precondition (bad pmf, length mismatch...)."""

    exit_code = 2


class DomainError(CttxError, ValueError):
    """Time outside the window a path is defined on."""

    exit_code = 2


class GridError(CttxError, ValueError):
    exit_code = 2


class ConfigError(CttxError, ValueError):
    exit_code = 2


class AbsoluteContinuityError(CttxError, ArithmeticError):
    """A realized event has positive probability under one law and zero under the other."""

    exit_code = 3


class ModelError(CttxError, ValueError):
    """A rate model returned an invalid (negative, non-finite) value."""

    exit_code = 3


class NumericalError(CttxError, ArithmeticError):
    exit_code = 4


class EstimationError(CttxError, RuntimeError):
    """Not enough data for the requested estimate."""

    exit_code = 5
