"""Exception types shared across the package."""


class RLHFLabError(Exception):
    """Base class for all errors raised by rlhflab."""


class ConfigurationError(RLHFLabError, ValueError):
    """Bad dimensions, shapes, or configuration values."""


class UpdateSkipped(RLHFLabError):
    """A gradient or update contained non-finite values and was dropped."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class LengthError(RLHFLabError, ValueError):
    """A context exceeded the maximum response length."""


class FitError(RLHFLabError, ValueError):
    """Too few usable points for a scaling-law fit, or a degenerate fit."""


class GainUndefinedError(RLHFLabError, ValueError):
    """The explored win rate is at or below one half, so no gain exists."""


class CheckpointError(RLHFLabError):
    """Corrupt, truncated, or version-mismatched checkpoint file."""


class KindMismatchError(CheckpointError):
    """A checkpoint of the wrong model kind was supplied."""
