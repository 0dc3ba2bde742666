"""Exception hierarchy shared across the package."""


class SbdError(Exception):
    """Base class for package-specific errors."""


class FormatError(SbdError):
    """A file does not conform to the expected binary layout."""


class TruncationError(FormatError):
    """A file's payload is shorter or longer than its header declares."""


class ValidationError(SbdError):
    """Data violates a structural invariant (shape, finiteness, ...)."""


class ParameterError(SbdError, ValueError):
    """An argument is outside its documented range."""


class DomainError(SbdError):
    """Input values lie outside the mathematical domain of an operation."""


class CalibrationError(SbdError):
    """Dose calibration failed (empty or degenerate vacuum region)."""


class ProtocolError(SbdError):
    """An external denoiser violated the file-exchange protocol."""


class ExternalDenoiserError(SbdError):
    """An external denoiser exited with a failure status."""

    def __init__(self, message, stderr=""):
        super().__init__(message)
        self.stderr = stderr


class ExternalTimeoutError(ExternalDenoiserError):
    """An external denoiser exceeded its time budget."""
