"""Exception types shared across the package."""


class CasetimeError(Exception):
    """Base class for all package-specific errors."""


class EmptyAnnotationError(CasetimeError):
    """An annotation table contained zero well-formed finding rows."""


class NoBodySectionError(CasetimeError):
    """A document dump has no body section marker."""


class UnparseableVerdictError(CasetimeError):
    """A phenotype response carries no usable 0/1 verdict."""


class UnparseableCategoryError(CasetimeError):
    """A category response carries no usable 0..5 label."""


class UnparseableDemographicsError(CasetimeError):
    """A demographics response has no usable n_cases | age | gender row."""


class ZeroVectorError(CasetimeError):
    """Cosine distance received a zero-norm vector."""


class TransportError(CasetimeError):
    """A remote endpoint stayed unreachable or kept failing after bounded retries."""


class RateLimitedError(TransportError):
    """The endpoint rate-limited every attempt.

    retry_after holds the last Retry-After value in seconds, if the server sent one.
    """

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class UndefinedMetricError(CasetimeError):
    """A metric's denominator is empty or degenerate for the given input."""


class ConfigError(CasetimeError):
    """A run configuration is invalid or references missing inputs."""
