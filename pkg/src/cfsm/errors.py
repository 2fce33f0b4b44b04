"""Exception types shared across the package."""


class CfsmError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CfsmError, ValueError):
    """An argument is outside the operation's domain (bad index, shape, ...)."""


class InvalidStageError(InvalidInputError):
    """A stage index is too small for the requested operation."""


class ConfigError(CfsmError, ValueError):
    """A solver or experiment configuration is inconsistent."""


class NumericError(CfsmError, ArithmeticError):
    """A numerical routine produced non-finite values or failed to converge."""


class PreconditionError(CfsmError):
    """An oracle was handed a state the algorithm could not have produced."""


class LibsvmParseError(InvalidInputError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
