"""Exception types shared across the package."""


class BPSimError(Exception):
    """Base class for all package errors."""


class InputError(BPSimError, ValueError):
    """Rejected input: malformed graph, model, or parameter."""


class CapacityError(BPSimError):
    """A brute-force computation would exceed its enumeration budget."""


class DegenerateDistributionError(BPSimError, ArithmeticError):
    """A local rule produced no valid distribution (e.g. no color available)."""


class ConvergenceError(BPSimError, ArithmeticError):
    """A numerical iteration failed to converge."""


class BrokenStreamError(BPSimError, RuntimeError):
    """The coupling sampler exhausted its batch cap without accepting."""


class InvariantViolation(BPSimError, AssertionError):
    """An internal invariant that must never fail did fail."""
