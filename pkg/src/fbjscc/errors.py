"""Exception types shared across the package.

Every error raised on a contract violation derives from FbjsccError so
callers (and the CLI) can distinguish our failures from genuine bugs.
"""


class FbjsccError(Exception):
    """Base class for all package-level errors."""


class ConfigError(FbjsccError, ValueError):
    """A configuration value or combination of values is invalid."""


class DimensionError(FbjsccError, ValueError):
    """An array dimension violates a stated divisibility or size contract."""


class ShapeError(FbjsccError, ValueError):
    """Two arrays that must agree in shape do not."""


class FormatError(FbjsccError, ValueError):
    """A file or byte stream does not match its declared format."""


class DegenerateInput(FbjsccError, ValueError):
    """An input is syntactically valid but numerically unusable (e.g. all zero)."""


class ModeError(FbjsccError, ValueError):
    """An enumerated mode string is not one of the allowed values."""


class SequenceError(FbjsccError, RuntimeError):
    """Blocks were pushed or consumed out of their required order."""


class DomainError(FbjsccError, ValueError):
    """A numeric argument lies outside the function's domain."""


class PluginMissing(FbjsccError, RuntimeError):
    """An optional plugin (e.g. a perceptual feature extractor) is unavailable."""


class HookMissing(FbjsccError, RuntimeError):
    """An external executable hook (e.g. a still-image codec) is unavailable."""


class DivergenceError(FbjsccError, RuntimeError):
    """Training produced a non-finite loss and was aborted."""
