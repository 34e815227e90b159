"""Exception hierarchy shared by every module."""


class SurpriseFilterError(Exception):
    """Base class for all package errors."""


class ConfigError(SurpriseFilterError, ValueError):
    """Inconsistent layout, bad config value, or mismatched lengths."""


class InvalidSubsetError(SurpriseFilterError, ValueError):
    """A sensor subset that would leave the fusion empty."""


class ContractError(SurpriseFilterError, ValueError):
    """Dimension mismatch or other violated precondition at call time."""


class FitError(SurpriseFilterError, RuntimeError):
    """Regression failed; the message names the offending block."""


class CalibrationError(SurpriseFilterError, ValueError):
    """Not enough clean samples to calibrate a threshold."""


class GuardError(SurpriseFilterError, ValueError):
    """Problem size exceeds what an exhaustive routine will attempt."""
