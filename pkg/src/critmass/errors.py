"""Exception hierarchy shared by every stage of the analysis."""


class CritMassError(Exception):
    """Base class for all analysis errors."""


class ValidationError(CritMassError, ValueError):
    """Input violates a documented invariant."""


class ParseError(ValidationError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class RecordLookupError(CritMassError, LookupError):
    """A selector matched no record, or more than one."""


class SingularityError(CritMassError, ArithmeticError):
    """Design matrix is rank deficient."""


class DegeneratePartitionError(CritMassError):
    """No admissible breakpoint leaves enough points on both sides."""


class InstabilityError(CritMassError):
    """Too many bootstrap resamples were degenerate."""


class ConvergenceError(CritMassError):
    """Iterative fit failed to converge; ``state`` holds the last iterate."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class DomainError(CritMassError, ValueError):
    """Argument outside the domain of a model or special function."""


class StateError(CritMassError):
    """Inputs are individually valid but inconsistent with each other."""
