"""Exception types shared across the package."""


class LtqkdError(Exception):
    """Base class for all package-specific errors."""


class DomainError(LtqkdError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateStates(LtqkdError, ValueError):
    """Two states are identical up to phase, so no second virtual state exists."""


class CollinearStates(LtqkdError, ValueError):
    """Three Bloch endpoints are collinear and do not define a plane."""


class SingularBasis(LtqkdError, ValueError):
    """The basis-state matrix is not invertible."""


class PlaneMismatch(LtqkdError, ValueError):
    """A decomposition target does not lie in the basis states' plane."""


class InfeasibleParams(LtqkdError, ValueError):
    """No parameter pair satisfies the optimization constraints."""


class EmptyTagSet(LtqkdError, ValueError):
    """A tag family has positive total weight but no supporting states."""


class SchemaError(LtqkdError, ValueError):
    """A scenario file violates the documented schema."""
