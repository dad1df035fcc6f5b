"""Exception types shared across the package."""


class ArrhcError(Exception):
    """Base class for all package-specific errors."""


class DomainError(ArrhcError, ValueError):
    """An argument violates a documented precondition (shape, range, symmetry)."""


class InstabilityError(ArrhcError):
    """A closed-loop matrix has spectral radius >= 1 where stability is required."""


class NumericsError(ArrhcError):
    """A numerical routine failed to reach its promised tolerance."""


class InfeasibleError(ArrhcError):
    """A seed state or optimization problem admits no feasible point."""


class ResilienceViolationError(ArrhcError):
    """The actuator plan buffer was exhausted: more consecutive attacks than the horizon covers."""


class ProtocolError(ArrhcError):
    """The replay channel was driven outside its valid state machine (attack with empty memory)."""


class CertificateError(ArrhcError):
    """A certificate quantity is outside its valid range or no certified threshold exists."""
