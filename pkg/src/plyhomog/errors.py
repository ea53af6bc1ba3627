"""Exception hierarchy shared by all plyhomog modules."""


class PlyHomogError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class ValidationError(PlyHomogError):
    exit_code = 2


class ParseError(ValidationError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class SingularTransform(PlyHomogError):
    exit_code = 2


class EmptyLattice(PlyHomogError):
    exit_code = 2


class NotInDomain(PlyHomogError):
    exit_code = 2


class NoOwningCell(PlyHomogError):
    exit_code = 2


class AnchorMissing(PlyHomogError):
    exit_code = 2


class NonPositiveValue(PlyHomogError):
    exit_code = 2


class BadExponent(ValidationError):
    pass


class DegenerateCell(PlyHomogError):
    exit_code = 3


class SolverError(PlyHomogError):
    exit_code = 3


class NoConvergence(SolverError):
    def __init__(self, message, history=None):
        self.history = list(history) if history is not None else []
        super().__init__(message)


class SolverDiverged(SolverError):
    pass


class PositivityLost(SolverError):
    pass


class AsymmetryExceeded(SolverError):
    pass


class CellSolveFailed(SolverError):
    pass


class SPDViolationAfterClamp(SolverError):
    pass


class ResolutionTooCoarse(ValidationError):
    pass


class DisconnectedFluid(PlyHomogError):
    exit_code = 3


class NegativeInitialData(ValidationError):
    pass


class StudyInconclusive(SolverError):
    pass


class IoError(PlyHomogError):
    exit_code = 4
