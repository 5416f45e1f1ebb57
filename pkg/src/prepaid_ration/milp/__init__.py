"""Mixed-integer threshold selection: model, exact solver and brute-force oracle."""

from .model import (
    Assignment,
    InfeasibleInstance,
    ModelInstance,
    assignment_from_actuation,
    balances_from_actuation,
    check_feasible,
    compute_big_m,
    dump_instance,
    instance_from_arrays,
    load_instance,
    objective_exact,
    objective_value,
    threshold_feasible,
)
from .oracle import MAX_CELLS, InstanceTooLarge, brute_force, random_instance
from .solver import solve

__all__ = [
    "Assignment",
    "InfeasibleInstance",
    "InstanceTooLarge",
    "MAX_CELLS",
    "ModelInstance",
    "assignment_from_actuation",
    "balances_from_actuation",
    "brute_force",
    "check_feasible",
    "compute_big_m",
    "dump_instance",
    "instance_from_arrays",
    "load_instance",
    "objective_exact",
    "objective_value",
    "random_instance",
    "solve",
    "threshold_feasible",
]
