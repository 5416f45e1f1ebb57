"""Core value types shared by the simulator, the policies and the solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

MINUTES_PER_DAY = 1440


class ValidationError(ValueError):
    """Raised when user-supplied data violates a type invariant."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LoadSpec:
    id: str
    name: str
    priority_rank: int
    max_power: float = 0.0

    def __post_init__(self):
        if int(self.priority_rank) != self.priority_rank or self.priority_rank < 1:
            raise ValidationError(
                f"load {self.id!r}: priority_rank must be a positive integer, got {self.priority_rank!r}"
            )


@dataclass(frozen=True)
class LoadTrace:
    """Per-step power draw of one appliance, in watts."""

    load_id: str
    power: np.ndarray

    def __post_init__(self):
        power = _frozen_array(self.power)
        if power.ndim != 1:
            raise ValidationError(f"load {self.load_id!r}: power must be one-dimensional")
        if not np.all(np.isfinite(power)) or np.any(power < 0):
            raise ValidationError(f"load {self.load_id!r}: power must be finite and >= 0")
        object.__setattr__(self, "power", power)

    @property
    def demand(self) -> np.ndarray:
        return (self.power > 0).astype(np.int8)

    def __len__(self) -> int:
        return len(self.power)

    def energy_kwh(self, step_hours: float) -> float:
        return float(self.power.sum() * step_hours / 1000.0)


@dataclass(frozen=True)
class TimeGrid:
    step_hours: float
    steps_per_day: int
    num_days: int

    def __post_init__(self):
        if self.step_hours <= 0 or self.steps_per_day < 1 or self.num_days < 1:
            raise ValidationError("time grid needs positive step length, steps per day and days")
        if abs(self.steps_per_day * self.step_hours - 24.0) > 1e-9:
            raise ValidationError("steps_per_day * step_hours must equal 24")

    @property
    def total_steps(self) -> int:
        return self.steps_per_day * self.num_days

    def day_of(self, t: int) -> int:
        return t // self.steps_per_day

    def day_start(self, day: int) -> int:
        return day * self.steps_per_day

    def is_day_start(self, t: int) -> bool:
        return t % self.steps_per_day == 0

    def window(self, num_days: int) -> "TimeGrid":
        return TimeGrid(self.step_hours, self.steps_per_day, num_days)


def build_time_grid(step_minutes: int, num_days: int) -> TimeGrid:
    if step_minutes < 1 or MINUTES_PER_DAY % step_minutes:
        raise ValidationError(f"step of {step_minutes} min does not divide a day")
    if num_days < 1:
        raise ValidationError("num_days must be >= 1")
    return TimeGrid(step_minutes / 60.0, MINUTES_PER_DAY // step_minutes, num_days)


@dataclass(frozen=True)
class Tariff:
    """Energy price per step, in dollars per watt-hour."""

    rate_per_wh: np.ndarray

    def __post_init__(self):
        rate = _frozen_array(self.rate_per_wh)
        if rate.ndim != 1 or not np.all(rate > 0):
            raise ValidationError("tariff rates must be a 1-d series of positive values")
        object.__setattr__(self, "rate_per_wh", rate)

    @classmethod
    def constant(cls, rate_per_kwh: float, total_steps: int) -> "Tariff":
        return cls(np.full(total_steps, rate_per_kwh / 1000.0))

    def __len__(self) -> int:
        return len(self.rate_per_wh)


@dataclass(frozen=True)
class RechargeSchedule:
    """Dense per-step top-ups of the real wallet (``real``) and the virtual wallet (``virtual``)."""

    real: np.ndarray
    virtual: np.ndarray

    def __post_init__(self):
        real = _frozen_array(self.real)
        virtual = _frozen_array(self.virtual)
        if real.shape != virtual.shape or real.ndim != 1:
            raise ValidationError("real and virtual recharge series must have equal 1-d shape")
        if np.any(real < 0) or np.any(virtual < 0):
            raise ValidationError("recharge amounts must be >= 0")
        object.__setattr__(self, "real", real)
        object.__setattr__(self, "virtual", virtual)

    @classmethod
    def from_maps(cls, real: Mapping[int, float], virtual: Mapping[int, float], total_steps: int):
        z = np.zeros(total_steps)
        x = np.zeros(total_steps)
        for t, amount in real.items():
            z[t] += amount
        for t, amount in virtual.items():
            x[t] += amount
        return cls(z, x)

    @property
    def real_events(self) -> dict[int, float]:
        return {int(t): float(self.real[t]) for t in np.flatnonzero(self.real)}

    @property
    def virtual_events(self) -> dict[int, float]:
        return {int(t): float(self.virtual[t]) for t in np.flatnonzero(self.virtual)}

    def __len__(self) -> int:
        return len(self.real)


@dataclass(frozen=True)
class PriorityFactors:
    gamma: Mapping[str, float]
    ranks: Mapping[str, int] = field(default_factory=dict)

    def __getitem__(self, load_id: str) -> float:
        return self.gamma[load_id]

    def exact(self, load_id: str) -> Fraction:
        """The weight as an exact fraction, derived from the ranks."""
        harmonic = sum(Fraction(1, r) for r in self.ranks.values())
        return Fraction(1, self.ranks[load_id]) / harmonic


def priority_factors(ranks: Mapping[str, int]) -> PriorityFactors:
    """Normalised inverse-rank weights: rank 1 gets the largest weight and the weights sum to 1."""
    if not ranks:
        raise ValidationError("need at least one load rank")
    values = list(ranks.values())
    if any(int(r) != r or r < 1 for r in values):
        raise ValidationError(f"ranks must be positive integers, got {values}")
    if len(set(values)) != len(values):
        raise ValidationError(f"ranks must be distinct, got {values}")
    inv = {k: 1.0 / r for k, r in ranks.items()}
    total = sum(inv.values())
    return PriorityFactors({k: v / total for k, v in inv.items()}, dict(ranks))


def check_traces(traces, grid: TimeGrid) -> None:
    ids = [tr.load_id for tr in traces]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate load ids in traces: {ids}")
    for tr in traces:
        if len(tr) != grid.total_steps:
            raise ValidationError(
                f"trace {tr.load_id!r} has {len(tr)} steps, grid has {grid.total_steps}"
            )


def power_matrix(traces) -> np.ndarray:
    return np.vstack([tr.power for tr in traces]) if traces else np.zeros((0, 0))
