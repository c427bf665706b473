"""Error hierarchy shared by every module of the toolkit.

Management commands map these onto exit codes: numeric failures exit
with 3, everything else with 2.
"""


class MorphtagError(Exception):
    """Base class for toolkit errors."""


class DimensionError(MorphtagError, ValueError):
    pass


class InputError(MorphtagError, ValueError):
    pass


class ParseError(MorphtagError, ValueError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class SchemeError(MorphtagError, ValueError):
    pass


class ConfigurationError(MorphtagError):
    pass


class ModeError(MorphtagError):
    pass


class LoadError(MorphtagError):
    pass


class NumericalError(MorphtagError, ArithmeticError):
    def __init__(self, operation, detail='non-finite value'):
        self.operation = operation
        super().__init__(f"{operation}: {detail}")
