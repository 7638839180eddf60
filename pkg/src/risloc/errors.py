"""Exception hierarchy shared by all risloc modules."""


class RislocError(Exception):
    """Base class for every error raised by this package."""


class DegenerateGeometry(RislocError):
    """Two points that must be distinct coincide (zero distance)."""


class DegenerateModel(RislocError):
    """A channel/model vector is zero, or a gain estimate vanished."""


class RankDeficient(RislocError):
    """A normal matrix of a closed-form update is singular."""


class NumericalFailure(RislocError):
    """A non-finite objective or intermediate value was produced."""


class Unidentifiable(RislocError):
    """The Fisher information matrix cannot be inverted."""


class ValidationError(RislocError, ValueError):
    """A configuration or scenario violates an invariant."""


class ParseError(RislocError, ValueError):
    """A configuration file could not be parsed.

    Attributes:
        lineno: 1-based line number of the offending line, or None.
    """

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
