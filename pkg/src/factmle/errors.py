"""Exception hierarchy shared by all factmle modules."""


class FactmleError(Exception):
    """Base class for errors raised by factmle."""


class ParseError(FactmleError, ValueError):
    """Malformed CSV input (non-numeric cell, ragged rows)."""


class DomainError(FactmleError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class NumericalError(FactmleError, ArithmeticError):
    """A numerical routine failed or produced an impossible quantity."""


class CertificationFailure(FactmleError, AssertionError):
    """A solver trace violates a descent or rate certificate.

    Attributes
    ----------
    iteration : int
        1-based index of the first violating step.
    check : str
        Name of the violated check ("descent" or "rate").
    """

    def __init__(self, message, iteration, check):
        super().__init__(message)
        self.iteration = iteration
        self.check = check
