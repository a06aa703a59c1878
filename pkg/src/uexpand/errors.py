"""Exception types shared across the package."""


class UExpandError(Exception):
    """Base class for every error raised by uexpand."""


class ParameterError(UExpandError, ValueError):
    pass


class ConfigError(UExpandError, ValueError):
    pass


class OutOfChartError(UExpandError, ValueError):
    pass


class PreconditionError(UExpandError, ValueError):
    pass


class BudgetError(UExpandError):
    pass


class NumericalError(UExpandError, ArithmeticError):
    """Any failure of the floating point pipeline (maps to exit code 3)."""


class DegenerateVolumeError(NumericalError):
    """A k-volume collapsed to zero.

    Kept distinct from generic numeric failure so that certification can tell
    an actual collapse of the cocycle apart from noise.
    """


class IllConditionedGeneratorError(NumericalError):
    pass


class IntegratorFailure(NumericalError):
    pass


class NumericalCollapseError(NumericalError):
    pass
