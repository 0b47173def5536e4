"""Exception types shared across the package."""

__all__ = [
    "EntroshapeError",
    "ConfigurationError",
    "InputError",
    "DivergenceError",
    "VerificationError",
]


class EntroshapeError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(EntroshapeError):
    """A parameter or config value is outside its documented domain."""


class InputError(EntroshapeError):
    """Input data is malformed (ragged, non-finite, wrong shape, ...)."""


class DivergenceError(EntroshapeError):
    """Training produced a non-finite loss; carries a diagnostic report."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class VerificationError(EntroshapeError):
    """An analytic result failed its independent numerical cross-check."""
