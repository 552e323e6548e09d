"""Exception hierarchy shared by all ldmaps modules."""


class LdmapsError(Exception):
    """Base class for all errors raised by ldmaps."""


class DomainError(LdmapsError, ValueError):
    """A point lies outside [0, 1] or outside a required region."""


class ArgumentError(LdmapsError, ValueError):
    """An argument violates a documented precondition."""


class PreconditionError(LdmapsError, ValueError):
    """An operation was invoked on an object not in the required state."""


class ResourceLimitError(LdmapsError, RuntimeError):
    """A configured cap (component count, lap count, ...) was exceeded."""


class NotDiffeomorphicError(LdmapsError, RuntimeError):
    """An iterate has a critical point on an interval assumed diffeomorphic."""


class DegenerateConfigurationError(LdmapsError, ValueError):
    """Nested intervals share an endpoint, so the cross-ratio is undefined."""


class NotTopologicallyExactError(LdmapsError, RuntimeError):
    """Iterated images failed to cover [0, 1] within the step cap."""


class NoScaleFoundError(LdmapsError, RuntimeError):
    """No candidate backward-stability scale passed the sampled experiments."""


class SearchFailureError(LdmapsError, RuntimeError):
    """A constructive search (scale, block, or branch search) ran out of candidates."""


class NoSafePointError(SearchFailureError):
    """No safe point was available where one was required."""


class NoConstrainedMassError(SearchFailureError):
    """No partition element meets the constraint set near the base point."""


class ConstructionRejectedError(LdmapsError, RuntimeError):
    """A constructed object failed its own verification report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConvergenceError(LdmapsError, RuntimeError):
    """An iterative solver did not converge within its iteration budget."""


class IllConditionedInputError(LdmapsError, ValueError):
    """Sampled input data violates a shape assumption (e.g. convexity) beyond tolerance."""


class InsufficientDataError(LdmapsError, ValueError):
    """Too few usable data points for the requested fit."""


class UnsupportedMapError(LdmapsError, ValueError):
    """The map has a feature (e.g. a periodic critical point) outside the supported class."""
