"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI reports for it.
"""


class AdlMvdrError(Exception):
    exit_code = 1


class ConfigurationError(AdlMvdrError, ValueError):
    exit_code = 2


class ParameterError(ConfigurationError):
    """Argument outside its documented domain."""


class DimensionError(ConfigurationError):
    """Shapes or layouts of two operands do not agree."""


class UnsupportedLayoutError(ConfigurationError):
    pass


class NumericError(AdlMvdrError, ArithmeticError):
    exit_code = 3


class ValidationError(NumericError):
    """Input matrix violates a structural requirement (e.g. Hermitian)."""


class DivergenceError(NumericError):
    pass


class FormatError(AdlMvdrError, IOError):
    exit_code = 4
