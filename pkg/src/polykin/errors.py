"""Exception hierarchy shared by all polykin modules."""


class PolykinError(Exception):
    """Base class for every error raised by the package."""


class DomainError(PolykinError, ValueError):
    """Input outside the domain where a formula is defined."""


class DegenerateCollision(PolykinError):
    """Pair with zero total collision energy, or undefined direction u/|u|."""


class SingularJacobian(PolykinError):
    """Jacobian evaluated where R' is 0 or 1."""


class QuadratureFailure(PolykinError):
    """Adaptive quadrature did not meet its tolerance."""


class UnsupportedAngular(PolykinError):
    """Requested norm is not available for the angular function."""


class NotFound(PolykinError):
    """Threshold search exhausted its range."""


class NoValidK0(PolykinError):
    """No truncation order satisfies the smallness condition."""


class RejectionStall(PolykinError):
    """Rejection sampler acceptance fell below its floor."""


class InsufficientSamples(PolykinError):
    """Histogram too sparse for a reliable entropy estimate."""


class HypothesisViolation(PolykinError):
    """Ensemble does not satisfy the hypotheses of a diagnostic."""


class ConfigError(PolykinError, ValueError):
    """Invalid run configuration. ``path`` names the offending field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class MomentOverflowWarning(RuntimeWarning):
    """A moment sum overflowed double precision and was reported as +inf."""


class MajorantViolationWarning(RuntimeWarning):
    """A candidate pair exceeded the NTC rate majorant."""
