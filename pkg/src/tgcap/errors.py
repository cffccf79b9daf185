"""Exception types shared across the package.

The CLI maps these onto exit codes, so every failure surfaced to an operator
should be one of them.
"""


class TgcapError(Exception):
    """Base class for all package errors."""


class DimensionError(TgcapError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TgcapError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(TgcapError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class VocabularyError(TgcapError, KeyError):
    """A token id or name is outside the vocabulary."""

    def __str__(self):
        return str(self.args[0]) if self.args else "vocabulary error"


class DataError(TgcapError):
    """Dataset contents are inconsistent or missing."""


class ConfigError(TgcapError, ValueError):
    """A configuration value or auxiliary config file is malformed."""


class FormatError(DataError):
    """A binary or text file does not match its declared layout."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
