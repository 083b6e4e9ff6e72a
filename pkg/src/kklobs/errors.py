"""Exception types shared across the toolkit."""


class KklError(Exception):
    """Base class for all toolkit errors."""


class NonFinite(KklError):
    """A simulated state left the finite-value range."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class OutOfRange(KklError):
    """Query time outside the stored span of a trajectory."""


class StencilOutOfDomain(KklError):
    """A finite-difference stencil leg left the finite-value range."""


class Degenerate(KklError):
    """No point pair satisfies the separation floor."""


class SignError(KklError):
    """A gain or slope parameter has the wrong sign."""


class DuplicateLambda(KklError):
    """Filter gains must be pairwise distinct."""


class BracketFailure(KklError):
    """No sign change found while bracketing the zero of sigma."""


class GapUnderflow(KklError):
    """Initial gap between two filter solutions is numerically zero."""


class NormUnderflow(KklError):
    """Residual norms sit at the integrator error floor; slope fit meaningless."""


class BackwardEscape(KklError):
    """Backward integration left the inflated invariant box."""


class ConfigError(KklError):
    """Invalid or incomplete configuration."""


class ZeroAmplitude(KklError):
    """Noise gain is undefined for zero noise amplitude."""


class MismatchedObservers(KklError):
    """Scenario reports disagree on the observer set."""
