"""Exception types shared across the package.

Everything derives from :class:`CsmriError` so callers (and the CLI) can
catch one base class; most errors also subclass ``ValueError`` because they
signal bad inputs rather than internal failures.
"""


class CsmriError(Exception):
    """Base class for all csmri errors."""


class SizeMismatchError(CsmriError, ValueError):
    """Array shapes/dimensions incompatible with the requested operation."""


class CalibrationError(CsmriError, ValueError):
    """Calibration region missing, too small, or degenerate."""


class NormalizationError(CsmriError, ValueError):
    """K-space normalization impossible (e.g. empty acquisition)."""


class ConventionError(CsmriError, ValueError):
    """Data normalization convention does not match the model's."""


class InfeasibleSpecError(CsmriError, ValueError):
    """Requested sampling mask cannot be realized (budget/calibration clash)."""


class DivergenceError(CsmriError, RuntimeError):
    """Iterative solver or trainer diverged (objective blow-up or NaN)."""


class ConfigError(CsmriError, ValueError):
    """Invalid configuration object."""


class FormatError(CsmriError, ValueError):
    """Malformed CKS/weights file. ``field`` names the violated header field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ZeroReferenceError(CsmriError, ValueError):
    """Metric reference image is identically zero."""
