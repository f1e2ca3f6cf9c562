"""Exception types raised across the package."""


class GeometryError(ValueError):
    """Invalid geometric input (mismatched spaces, points off the model, bad sides)."""


class DegenerateGeodesicError(GeometryError):
    """A geodesic was requested between coincident points."""


class NonUniqueGeodesicError(GeometryError):
    """The endpoints are (numerically) antipodal, so the segment is not unique."""


class PreconditionError(GeometryError):
    """An operation's documented precondition does not hold."""


class NonUniqueProjectionError(GeometryError):
    """The nearest-point set is a continuum; representatives are attached."""

    def __init__(self, message, representatives=()):
        super().__init__(message)
        self.representatives = list(representatives)


class SolverFailure(RuntimeError):
    """The numeric projection solver found no feasible candidate."""


class HypothesisViolation(ValueError):
    """Rate-certificate constants do not satisfy the contraction inequalities."""


class InsufficientDataError(ValueError):
    """Too few usable iterates for a rate fit."""


class WitnessFailure(RuntimeError):
    """A constructed witness curve left its set at some sampled time."""

    def __init__(self, message, t=None, coords=None, violation=None):
        super().__init__(message)
        self.t = t
        self.coords = coords
        self.violation = violation
