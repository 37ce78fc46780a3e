"""
Exception hierarchy for the VFS laboratory.

Every error raised on purpose by the package derives from VFSError so the CLI
can map failures to exit codes in one place.
"""

from typing import Optional


class VFSError(Exception):
    """Base class for all package errors."""


class ShapeError(VFSError):
    """Operand shapes are incompatible."""


class ContractError(VFSError):
    """A documented precondition was violated by the caller."""


class NumericError(VFSError):
    """A computation produced or received non-finite values."""


class RangeError(VFSError):
    """An index or sampling range falls outside the valid interval."""


class SpecError(VFSError):
    """A generator or model specification cannot be realised."""


class ParameterError(VFSError):
    """A hyperparameter value is out of its admissible domain."""


class ConfigError(VFSError):
    """The run configuration is malformed or names unknown keys."""


class FormatError(VFSError):
    """A binary file does not follow the expected layout."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class TrainingError(NumericError):
    """Training diverged; `dump_path` points at the diagnostic dump if one was written."""

    def __init__(self, message: str, dump_path: Optional[str] = None):
        self.dump_path = dump_path
        if dump_path:
            message = f"{message} (diagnostics: {dump_path})"
        super().__init__(message)
