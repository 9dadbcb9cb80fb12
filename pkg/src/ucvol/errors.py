"""Exception hierarchy shared by all modules."""


class UCError(Exception):
    """Base class for domain errors raised by the engine."""


class DegenerateSet(UCError):
    """Covariance of a point set has no unique dominant axis."""


class InsufficientPoints(UCError):
    """A point set cannot supply three non-collinear vertices."""


class NotNice(UCError):
    """No complete 3-tree with the required edge classes exists."""


class NoRealSolution(UCError):
    """Trilateration has a negative height discriminant or degenerate anchors."""


class NoRealPreimage(UCError):
    """A Cayley point has no real Cartesian realization in the requested flip."""


class SuperpositionFailure(UCError):
    """Realized vertices do not match the rigid template."""


class ZeroVolume(UCError):
    """A signed tetrahedron volume is numerically zero."""


class EmptyBox(UCError):
    """Cayley parameter bounds are inverted."""


class EmptyACR(UCError):
    """No realizable seed configuration was found for an ACR."""


class InfeasibleSample(UCError):
    """A trajectory sample violates the collision constraints."""


class InsufficientData(UCError):
    """Not enough data to compute an estimate."""


class UndefinedLevel(UCError):
    """A per-level denominator is zero."""


class BudgetExceeded(UCError):
    """Projected work exceeds the configured cap."""


class ConfigError(UCError):
    """Invalid run configuration."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
