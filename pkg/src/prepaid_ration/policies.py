"""Threshold plans for the baseline, fixed-threshold and optimised cases."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .domain import LoadSpec, TimeGrid, ValidationError
from .milp import ModelInstance, solve
from .simkernel import ThresholdPlan

BASELINE_SENTINEL = -1e12  # "always enabled"; never written to reports


@dataclass(frozen=True)
class Baseline:
    name = "baseline"


@dataclass(frozen=True)
class FixedThresholds:
    beta: float = 0.05
    name = "fixed"

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValidationError(f"beta must lie in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class OptimizedThresholds:
    horizon_days: int = 7
    time_limit: float = 60.0
    name = "optimal"

    def __post_init__(self):
        if self.horizon_days < 1:
            raise ValidationError(f"horizon_days must be >= 1, got {self.horizon_days}")


PolicyKind = Union[Baseline, FixedThresholds, OptimizedThresholds]


def policy_from_name(name: str, *, beta: float = 0.05, horizon_days: int = 7) -> PolicyKind:
    if name == "baseline":
        return Baseline()
    if name == "fixed":
        return FixedThresholds(beta)
    if name in ("optimal", "optimized"):
        return OptimizedThresholds(horizon_days)
    raise ValidationError(f"unknown policy {name!r} (expected baseline, fixed or optimal)")


def uses_protective_shed(policy: PolicyKind) -> bool:
    # the baseline has no energy manager, so nothing guards the real wallet
    return not isinstance(policy, Baseline)


def baseline_plan(load_ids: Sequence[str], grid: TimeGrid) -> ThresholdPlan:
    return ThresholdPlan.constant(load_ids, BASELINE_SENTINEL, grid.num_days)


def fixed_plan(loads: Sequence[LoadSpec], total_recharge: float, beta: float, grid: TimeGrid) -> ThresholdPlan:
    """theta_k = (rank_k / N) * beta * X for every day of the month."""
    if not total_recharge > 0:
        raise ValidationError("total recharge must be positive")
    n = len(loads)
    th = np.array([[l.priority_rank / n * beta * total_recharge] * grid.num_days for l in loads])
    return ThresholdPlan(tuple(l.id for l in loads), th)


def optimized_plan(instance: ModelInstance, *, time_limit: float = 60.0):
    """Solve one forecast window; returns (plan for every window day, Assignment).

    Callers in rolling mode apply only the first day.
    """
    assignment = solve(instance, time_limit=time_limit)
    return assignment.thresholds, assignment
