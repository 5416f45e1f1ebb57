"""Fixed-step wallet/threshold simulator.

Within step ``t`` the order is: recharge, enable signals, actuation, spend.
``z``/``x`` on a :class:`StepRecord` are the balances the enable signals see
(after the step's recharge, before its spend); ``z_end``/``x_end`` are the
balances after the spend.  Charging consumption at the end of its own step is
the same recurrence as charging it at the start of the next one, shifted by
one index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import (
    LoadTrace,
    RechargeSchedule,
    Tariff,
    TimeGrid,
    ValidationError,
    check_traces,
    power_matrix,
)

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class WalletState:
    real_balance: float = 0.0
    virtual_balance: float = 0.0


@dataclass(frozen=True)
class ThresholdPlan:
    """Dollar thresholds per load (rows) and day (columns)."""

    load_ids: tuple[str, ...]
    thresholds: np.ndarray

    def __post_init__(self):
        th = np.array(self.thresholds, dtype=float, copy=True)
        if th.ndim != 2 or th.shape[0] != len(self.load_ids):
            raise ValidationError("thresholds must be a (num_loads, num_days) array")
        if np.any(np.isnan(th)):
            raise ValidationError("thresholds must not be NaN")
        th.setflags(write=False)
        object.__setattr__(self, "load_ids", tuple(self.load_ids))
        object.__setattr__(self, "thresholds", th)

    @classmethod
    def from_mapping(cls, load_ids: Sequence[str], values: Mapping[tuple[str, int], float], num_days: int):
        th = np.empty((len(load_ids), num_days))
        for i, k in enumerate(load_ids):
            for d in range(num_days):
                th[i, d] = values[(k, d)]
        return cls(tuple(load_ids), th)

    @classmethod
    def constant(cls, load_ids: Sequence[str], value: float, num_days: int):
        return cls(tuple(load_ids), np.full((len(load_ids), num_days), float(value)))

    @property
    def num_days(self) -> int:
        return self.thresholds.shape[1]

    def at(self, load_id: str, day: int) -> float:
        return float(self.thresholds[self.load_ids.index(load_id), day])

    def as_mapping(self) -> dict[tuple[str, int], float]:
        return {
            (k, d): float(self.thresholds[i, d])
            for i, k in enumerate(self.load_ids)
            for d in range(self.num_days)
        }

    def splice(self, other: "ThresholdPlan", start_day: int) -> "ThresholdPlan":
        """Copy of this plan with ``other``'s columns written from ``start_day`` on."""
        if other.load_ids != self.load_ids:
            raise ValidationError("cannot splice plans over different loads")
        th = np.array(self.thresholds)
        stop = min(self.num_days, start_day + other.num_days)
        th[:, start_day:stop] = other.thresholds[:, : stop - start_day]
        return ThresholdPlan(self.load_ids, th)


@dataclass(frozen=True)
class StepRecord:
    t: int
    z: float
    x: float
    z_end: float
    x_end: float
    enables_virtual: np.ndarray
    enables_real: int
    actuation: np.ndarray
    shed_all: bool


@dataclass
class SimulationResult:
    load_ids: tuple[str, ...]
    records: list[StepRecord]
    final_state: WalletState
    disconnections: list[tuple[int, int]]
    energy_served: dict[str, float]
    actuation: np.ndarray = field(repr=False)
    demand: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    shed_steps: int = 0

    @property
    def balances(self) -> np.ndarray:
        """Real balance seen at every step, followed by the closing balance."""
        return np.append(self.z, self.final_state.real_balance)


def virtual_enable(x: float, threshold: float, eps: float = DEFAULT_EPS) -> int:
    """1 when the virtual balance is at or above the threshold.

    Balances strictly below the threshold disable the load; the optimiser keeps
    every balance it plans for at least ``eps`` away from that edge.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    return int(x >= threshold)


def real_enable(z: float) -> int:
    return int(z > 0)


def _spend(power_col: np.ndarray, actuation: np.ndarray, rate: float, step_hours: float) -> float:
    return float(rate * step_hours * np.dot(power_col, actuation))


def step(
    state: WalletState,
    t: int,
    plan: ThresholdPlan,
    traces: Sequence[LoadTrace],
    tariff: Tariff,
    recharges: RechargeSchedule,
    grid: TimeGrid,
    *,
    eps: float = DEFAULT_EPS,
    protective_shed: bool = True,
) -> tuple[WalletState, StepRecord]:
    """Advance the wallets by one step."""
    power = power_matrix(traces)
    return _step(state, t, plan.thresholds[:, grid.day_of(t)], power, tariff.rate_per_wh,
                 recharges.real, recharges.virtual, grid, eps, protective_shed)


def _step(state, t, day_thresholds, power, rate, real_rc, virt_rc, grid, eps, protective_shed):
    if not 0 <= t < len(rate):
        raise ValidationError(f"step {t} outside the grid")
    z = state.real_balance + real_rc[t]
    x = state.virtual_balance + virt_rc[t]
    col = power[:, t]
    ux = (x >= day_thresholds).astype(np.int8)
    uz = real_enable(z)
    a = ((col > 0) & (ux == 1) & bool(uz)).astype(np.int8)
    spend = _spend(col, a, rate[t], grid.step_hours)
    shed = False
    if protective_shed and a.any():
        next_recharge = real_rc[t + 1] if t + 1 < len(real_rc) else 0.0
        if z - spend + next_recharge <= 0:
            shed = True
            a = np.zeros_like(a)
            spend = 0.0
    z_end = z - spend
    x_end = x - spend
    rec = StepRecord(t, z, x, z_end, x_end, ux, uz, a, shed)
    return WalletState(z_end, x_end), rec


def disconnection_runs(balances: Sequence[float]) -> list[tuple[int, int]]:
    """Maximal runs of non-positive balance that follow a positive one.

    A leading run (the wallet was never funded) is not a disconnection.
    Returned as inclusive ``(start, end)`` index pairs.
    """
    runs = []
    seen_positive = False
    start = None
    for i, b in enumerate(balances):
        if b > 0:
            if start is not None:
                runs.append((start, i - 1))
                start = None
            seen_positive = True
        elif seen_positive and start is None:
            start = i
    if start is not None:
        runs.append((start, len(balances) - 1))
    return runs


def simulate(
    plan: ThresholdPlan,
    traces: Sequence[LoadTrace],
    tariff: Tariff,
    recharges: RechargeSchedule,
    grid: TimeGrid,
    initial: WalletState = WalletState(),
    *,
    eps: float = DEFAULT_EPS,
    protective_shed: bool = True,
    start_step: int = 0,
    num_steps: int | None = None,
) -> SimulationResult:
    """Run the wallets over ``num_steps`` steps starting at ``start_step`` (default: whole grid)."""
    check_traces(traces, grid)
    load_ids = tuple(tr.load_id for tr in traces)
    if plan.load_ids != load_ids:
        raise ValidationError(f"plan loads {plan.load_ids} do not match traces {load_ids}")
    if plan.num_days < grid.num_days:
        raise ValidationError("plan does not cover every day of the grid")
    if len(tariff) != grid.total_steps or len(recharges) != grid.total_steps:
        raise ValidationError("tariff and recharge series must span the grid")
    stop = grid.total_steps if num_steps is None else start_step + num_steps
    if not 0 <= start_step <= stop <= grid.total_steps:
        raise ValidationError("requested step range lies outside the grid")

    power = power_matrix(traces)
    rate = tariff.rate_per_wh
    state = initial
    records = []
    n = stop - start_step
    act = np.zeros((len(load_ids), n), dtype=np.int8)
    zs = np.empty(n)
    xs = np.empty(n)
    shed_steps = 0
    for i, t in enumerate(range(start_step, stop)):
        state, rec = _step(state, t, plan.thresholds[:, grid.day_of(t)], power, rate,
                           recharges.real, recharges.virtual, grid, eps, protective_shed)
        records.append(rec)
        act[:, i] = rec.actuation
        zs[i] = rec.z
        xs[i] = rec.x
        shed_steps += rec.shed_all

    window_power = power[:, start_step:stop]
    served = (window_power * act).sum(axis=1) * grid.step_hours / 1000.0
    runs = disconnection_runs(np.append(zs, state.real_balance))
    runs = [(start_step + a, start_step + b) for a, b in runs]
    return SimulationResult(
        load_ids=load_ids,
        records=records,
        final_state=state,
        disconnections=runs,
        energy_served={k: float(e) for k, e in zip(load_ids, served)},
        actuation=act,
        demand=(window_power > 0).astype(np.int8),
        z=zs,
        x=xs,
        shed_steps=shed_steps,
    )


def write_ledger(result: SimulationResult, path) -> None:
    """Per-step CSV dump: ``t,z,x,shed_all,a_<load>...,ux_<load>...``."""
    header = ["t", "z", "x", "shed_all"]
    header += [f"a_{k}" for k in result.load_ids]
    header += [f"ux_{k}" for k in result.load_ids]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in result.records:
            w.writerow(
                [r.t, repr(float(r.z)), repr(float(r.x)), int(r.shed_all)]
                + [int(v) for v in r.actuation]
                + [int(v) for v in r.enables_virtual]
            )
