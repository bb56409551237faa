"""Balanced clustering with replication, capacity constraints and nearest-neighbour dispatch."""

from .core import (Assignment, Constraints, CostMatrix, Instance, Objective, ViolationReport,
                   check_capacities, cost_matrix, evaluate)
from .errors import (BalclustError, InfeasibleError, InvariantError, NoSolutionError, NotStableError,
                     SuggestLargerTauError)

__version__ = "0.1.0"

__all__ = ["Assignment", "Constraints", "CostMatrix", "Instance", "Objective", "ViolationReport",
           "check_capacities", "cost_matrix", "evaluate", "BalclustError", "InfeasibleError",
           "InvariantError", "NoSolutionError", "NotStableError", "SuggestLargerTauError"]
