"""Exception taxonomy shared by all holokit modules.

Every failure mode that a caller can act on gets its own class; payload
attributes carry the diagnostic data (offending index, partial convergence
evidence, candidate dimensions, ...) so reports can embed them verbatim.
"""


class HolokitError(Exception):
    """Base class for all holokit errors."""


class SchemaError(HolokitError):
    """Malformed config / unknown verb; carries the offending field name."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class PreconditionError(HolokitError):
    """An operation's stated precondition was violated."""


class NotEnoughDataError(PreconditionError):
    pass


class BoundaryProximityError(PreconditionError):
    """Point too close to the boundary for reliable metric evaluation."""


class OutOfDomainError(PreconditionError):
    pass


class SingularityError(PreconditionError):
    """Input on or numerically at the singular set of a transform."""


class InvalidCenterError(PreconditionError):
    """Horosphere / Koranyi center not on the boundary."""


class DegenerateGeodesicError(PreconditionError):
    pass


class NotInHorosphereError(PreconditionError):
    pass


class DegenerateBoundaryError(PreconditionError):
    """Vanishing defining-function gradient at a boundary point."""


class InvalidRadiusError(PreconditionError):
    pass


class NonInvertibleSubstitutionError(PreconditionError):
    """Series substitution whose linear part is singular."""


class MonotonicityViolationError(HolokitError):
    """A sequence required to be monotone is not; carries the first bad index."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class MetricInconsistencyError(MonotonicityViolationError):
    """Step/distance sequence violates a guaranteed monotonicity beyond slack."""


class NonConvergentLimitError(HolokitError):
    """A limit estimator ran out of budget; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonConvergentOrbitError(NonConvergentLimitError):
    pass


class NonConvergentModelError(NonConvergentLimitError):
    pass


class TrappedOrbitError(HolokitError):
    """Stopping-time iteration never exited its horosphere."""


class InsufficientSqueezingError(HolokitError):
    """Squeezing certificate below the floor needed by model extraction."""

    def __init__(self, message, inner_radius=None):
        super().__init__(message)
        self.inner_radius = inner_radius


class AmbiguousDimensionError(HolokitError):
    """Rank gap test failed; carries the candidate dimensions."""

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)


class StabilityError(HolokitError):
    """Pulled-back sample grid left the domain during stage evaluation."""


class ChartConstructionError(HolokitError):
    """Normal-form reduction left non-removable coefficients; carries them."""

    def __init__(self, message, coefficients=None):
        super().__init__(message)
        self.coefficients = coefficients


class InsufficientPrecisionError(HolokitError):
    """Sandwich gap exceeds the precision demanded by the caller."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class InvariantViolationError(HolokitError):
    """A checked invariant failed; carries the witness data."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
