"""
Exception hierarchy for the irc toolkit.

Every error carries the process exit code the CLI reports for it.
"""


class IrcError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1


class InvalidArgumentError(IrcError, ValueError):
    """An operation was called with arguments outside its contract"""

    exit_code = 2


class ConfigError(IrcError):
    """Configuration is malformed, incomplete or inconsistent"""

    exit_code = 2


class DataError(IrcError):
    """Input data could not be used"""

    exit_code = 3


class ParseError(DataError):
    """A file could not be decoded; `offset` is the byte offset of the failure"""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DegenerateFieldError(DataError):
    """A field holds no usable geometry for the requested operation"""


class NumericError(IrcError):
    """Optimization produced non-finite values"""

    exit_code = 4


class StageError(IrcError):
    """A pipeline stage failed; wraps the original cause"""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", None) or _exit_code_for(cause)


def _exit_code_for(cause: Exception) -> int:
    if isinstance(cause, OSError):
        return ConfigError.exit_code
    if isinstance(cause, ArithmeticError):
        return NumericError.exit_code
    return DataError.exit_code
