"""Exception types shared across the package."""


class KtlabError(Exception):
    """Base class for package errors."""


class InvalidFieldError(KtlabError):
    """Rejected input field (non-finite values, grid mismatch, ...)."""


class StabilityError(KtlabError):
    """Time-step violates the advective stability precondition."""


class BlowupError(KtlabError):
    """Solution norm exceeded the blow-up guard."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class MissingLogError(KtlabError):
    """Operation requires a per-step noise coefficient log that is absent."""


class NonSolenoidalError(KtlabError):
    """Vector field fails the divergence-free check."""

    def __init__(self, message: str, max_divergence: float):
        super().__init__(message)
        self.max_divergence = max_divergence


class SchemaError(KtlabError):
    """Run configuration failed validation."""


class ChecksumError(KtlabError):
    """Persisted artifact failed its integrity check."""

    def __init__(self, message: str, path: str):
        super().__init__(message)
        self.path = path
