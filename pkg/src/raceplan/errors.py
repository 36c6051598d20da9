"""Exception hierarchy shared across the planner modules."""


class RaceplanError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(RaceplanError):
    """A track or config file could not be parsed."""


class GeometryError(RaceplanError):
    """Track geometry violates a structural requirement (ordering, widths)."""


class ConsistencyError(RaceplanError):
    """Redundant track columns disagree beyond tolerance."""


class OutOfRangeError(RaceplanError):
    """Query position outside an open track's arc-length range."""


class SpecError(RaceplanError):
    """Invalid synthetic-track segment specification."""


class DomainError(RaceplanError):
    """A state or parameter is outside the model's valid domain."""


class SingularityError(RaceplanError):
    """The ribbon mapping degenerates (1 - n*kappa <= 0)."""


class HorizonError(RaceplanError):
    """A reference trajectory does not span the requested horizon."""


class BlockedError(RaceplanError):
    """Graph start or destination lies inside an expanded obstacle."""


class NoPathError(RaceplanError):
    """Start and destination are not connected in the visibility graph."""


class EmptyCorridorError(RaceplanError):
    """Corridor bounds cross (right bound above left bound) at some sample."""


class GridError(RaceplanError):
    """Corridor grid and OCP grid do not match."""


class InfeasibleHardError(RaceplanError):
    """No solver iterate satisfies the hard constraints within tolerance."""


class PlanExhaustedError(RaceplanError):
    """The active plan does not cover the requested simulation step."""
