"""Exception hierarchy shared by all modules.

Input problems derive from :class:`InputError` and map to CLI exit code 2;
numerical failures derive from :class:`NumericalError` and map to exit code 1.
"""


class TohmError(Exception):
    """Base class for every error raised by this package."""


class InputError(TohmError, ValueError):
    """Invalid user input (bad parameters, malformed files)."""


class ValidationError(InputError):
    pass


class EmptyDomainError(ValidationError):
    pass


class FieldParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CapabilityError(InputError):
    """Requested EC density is not available for the family/dimension."""


class DomainError(InputError):
    """Argument outside the mathematical domain of a function."""


class NumericalError(TohmError, ArithmeticError):
    pass


class SolveError(NumericalError):
    def __init__(self, message: str, condition: float | None = None):
        self.condition = condition
        super().__init__(message)


class FieldError(NumericalError):
    """Failure while evaluating a test-statistic field at a lattice point."""


class ModelError(InputError):
    pass
