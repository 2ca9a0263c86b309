"""Exception types shared across the package."""


class SeqGraphError(Exception):
    """Base class for all package errors."""


class GraphValidationError(SeqGraphError):
    """A graph specification violates a structural invariant."""


class WeightSumExceeded(GraphValidationError):
    pass


class RowSumExceeded(GraphValidationError):
    pass


class NegativeWeight(GraphValidationError):
    pass


class DimensionMismatch(GraphValidationError):
    pass


class InvalidTransition(GraphValidationError):
    pass


class InactiveNode(SeqGraphError):
    """Attempted to reject a node that is not active."""


class InvalidWeight(SeqGraphError):
    """Information weight q outside (0, 1)."""


class OutOfDomain(SeqGraphError):
    """Spending-function argument outside its domain."""


class SpentIncrementNonpositive(SeqGraphError):
    """A spending increment is zero or negative (degenerate schedule)."""


class ConvergenceFailure(SeqGraphError):
    """A numerical solver failed to converge."""


class SpendingMonotonicityViolation(SeqGraphError):
    """Nominal levels are not strictly increasing on the requested level path."""


class MissingObservation(SeqGraphError):
    """A stage submission omits a hypothesis still collecting data."""


class StageOverrun(SeqGraphError):
    """A stage beyond the planned number of analyses was submitted."""


class NotCollecting(SeqGraphError):
    """A stop decision names a hypothesis whose data collection already ended."""


class InvalidStartVector(SeqGraphError):
    """A user-supplied start vector violates its admissibility condition."""


class MaxItersExceeded(SeqGraphError):
    """Iteration cap reached before the bracket gap closed."""


class NotPSD(SeqGraphError):
    """A correlation matrix is not positive semi-definite."""


class ParseError(SeqGraphError):
    """A design or scenario document could not be parsed."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class ValidationError(SeqGraphError):
    """A parsed document violates a named invariant."""
