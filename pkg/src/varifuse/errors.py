"""Exception types shared across the toolkit."""

from __future__ import annotations


class VarifuseError(Exception):
    """Base class for all toolkit errors."""


class GeometryError(VarifuseError):
    """Raster or operator geometry is invalid or inconsistent."""


class FormatError(VarifuseError):
    """A container file is malformed.

    Carries the byte offset at which parsing failed, plus expected/actual
    byte counts when the failure is a size mismatch.
    """

    def __init__(self, message: str, offset: int, expected: int | None = None, actual: int | None = None):
        super().__init__(message)
        self.offset = offset
        self.expected = expected
        self.actual = actual


class UnsupportedFormatError(VarifuseError):
    """The file is recognizable but uses an unsupported variant."""


class DomainError(VarifuseError):
    """A value lies outside the mathematical domain of an operation."""


class OperatorError(VarifuseError):
    """A linear operator violated a contract (e.g. failed a symmetry probe)."""


class ConfigError(VarifuseError):
    """A solver or task was configured inconsistently."""


class SubspaceError(VarifuseError):
    """A spectral subspace of the requested dimension does not exist."""

    def __init__(self, message: str, achievable_rank: int | None = None):
        super().__init__(message)
        self.achievable_rank = achievable_rank


class PluginError(VarifuseError):
    """An external denoiser plugin failed.

    ``diagnostics`` holds whatever the child process wrote to stderr before
    the failure was detected.
    """

    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message)
        self.diagnostics = diagnostics
