"""Exception types shared across the package."""


class KwlabError(Exception):
    """Base class for all package-specific failures."""


class NonHermitianInputError(KwlabError):
    """Spectral data does not represent a real spatial field."""


class BlowUpError(KwlabError):
    """A solver state picked up non-finite coefficients."""

    def __init__(self, message, time=None, max_abs=None):
        super().__init__(message)
        self.time = time
        self.max_abs = max_abs


class NearResonance(KwlabError):
    """A frequency tuple fell inside the resonance guard band.

    Quadratures exclude such tuples and count them; scalar symbol
    evaluation raises instead so the caller can decide.
    """

    def __init__(self, message, tuple_=None):
        super().__init__(message)
        self.tuple_ = tuple_


class ResourceLimitError(KwlabError):
    """A requested computation exceeds the configured mode cap."""


class TruncationMismatchError(KwlabError):
    """Trajectory metadata disagrees with the quadrature cutoff."""


class InfeasibleScheduleError(KwlabError):
    """No (lambda, N) pair satisfies the global-iteration relations."""


class UnknownFormatVersionError(KwlabError):
    """A binary file declares a version this reader does not know."""


class ConfigError(KwlabError):
    """Bad experiment configuration (unknown key, unparsable value)."""
