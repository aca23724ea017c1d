"""Exception hierarchy shared across the toolkit."""


class QuantemuError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(QuantemuError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(InvalidInputError):
    """An input point lies outside the discrete design space."""


class ConfigError(QuantemuError):
    """An experiment configuration is missing, malformed or inconsistent."""


class FitError(QuantemuError, RuntimeError):
    """Model estimation failed (e.g. covariance not positive definite)."""


class StateError(QuantemuError, RuntimeError):
    """An operation was called on an object in the wrong state."""


class UnsupportedModeError(QuantemuError):
    """The requested operation is undefined for the current transform mode."""


class DegenerateEvaluationError(QuantemuError):
    """An evaluation metric is undefined on the supplied data (e.g. zero range)."""
