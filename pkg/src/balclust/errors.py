"""Exception hierarchy shared across the package."""


class BalclustError(Exception):
    """Base class for all package errors."""


class InfeasibleError(BalclustError):
    """No solution satisfies the constraints (LP, flow, or clustering)."""


class NoSolutionError(InfeasibleError):
    """No threshold admits a component-wise feasible split."""


class NotStableError(BalclustError):
    """The instance does not have the structure a stability-based method needs."""


class SuggestLargerTauError(BalclustError):
    """Threshold clustering could not carve k nonempty clusters at this tau."""


class InvariantError(BalclustError):
    """An internal guarantee was violated. Indicates a bug, not bad input."""
