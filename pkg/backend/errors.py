"""
Aberro error types
Every failure raised by the library derives from AberroError so the CLI and
the API can map it to an exit code / HTTP status in one place.
"""


class AberroError(Exception):
    """Base class for all library errors"""


class InvalidArgumentError(AberroError, ValueError):
    """Argument outside the operation's domain (negative index, t <= 0, shape mismatch...)"""


class DegenerateInputError(AberroError, ValueError):
    """Input is well-typed but carries no usable signal (all-zero pupil, oversized kernel)"""


class OutOfBandError(AberroError, ValueError):
    """Requested spatial frequency lies beyond the optical cutoff"""


class UndefinedMetricError(AberroError, ArithmeticError):
    """Metric has an empty population or a zero denominator"""


class InsufficientDataError(AberroError, ValueError):
    """Not enough samples for the requested statistic"""


class FitFailureError(AberroError, RuntimeError):
    """Non-linear fit did not converge from any start"""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingError(AberroError, RuntimeError):
    """Calibrator training aborted (non-finite loss etc.)"""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TensorFormatError(AberroError, ValueError):
    """Malformed TNSR file; `offset` is the byte position where parsing failed"""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(AberroError, ValueError):
    """Invalid configuration file or block"""


class IntegrityError(AberroError):
    """Dataset file does not match its manifest hash"""
