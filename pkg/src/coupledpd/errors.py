"""Exception types raised by the solver stack."""


class CoupledPDError(Exception):
    """Base class for all package errors."""


class DomainError(CoupledPDError, ValueError):
    """A function was evaluated outside its domain (e.g. log of a nonpositive number)."""


class NonConvergence(CoupledPDError, RuntimeError):
    """An inner iterative routine (Dykstra, prox solve) hit its iteration cap."""


class InfeasibleState(CoupledPDError, ValueError):
    """A state that must lie in a set was found outside it beyond tolerance."""


class Diverged(CoupledPDError, RuntimeError):
    """Multipliers blew up during a run; usually a mis-set K or an infeasible instance."""


class SlaterViolation(CoupledPDError, ValueError):
    """The candidate Slater point is not strictly feasible."""


class LowAccuracy(CoupledPDError, RuntimeError):
    """A reference solution failed its KKT self-certification."""

    def __init__(self, message, x=None, lam=None, report=None):
        super().__init__(message)
        self.x = x
        self.lam = lam
        self.report = report


class DegenerateReference(CoupledPDError, ValueError):
    """Relative error requested against an (almost) all-zero reference point."""


class InstanceFormatError(CoupledPDError, ValueError):
    """Malformed instance document."""
