"""Exception hierarchy.

``ValidationError`` subclasses map to CLI exit code 2, ``SolverError``
subclasses to exit code 3.
"""


class PerfhomError(Exception):
    pass


class ValidationError(PerfhomError):
    pass


class SolverError(PerfhomError):
    pass


class InvalidGeometry(ValidationError):
    pass


class MeshQuality(ValidationError):
    pass


class StitchFailure(ValidationError):
    pass


class NotElliptic(ValidationError):
    pass


class NotPositive(ValidationError):
    pass


class EmptySigma(ValidationError):
    pass


class MissingTag(ValidationError):
    pass


class ConflictingConstraints(ValidationError):
    pass


class Incompatible(ValidationError):
    pass


class MeshMismatch(ValidationError):
    pass


class ProvenanceMismatch(ValidationError):
    pass


class CoercivityFailed(ValidationError):
    pass


class SolverBreakdown(SolverError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
