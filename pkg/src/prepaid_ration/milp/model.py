"""Threshold-selection problem: instance data, balance recurrence and feasibility tests.

Index conventions for a window of ``T`` steps:

* ``z[t]``/``x[t]`` for ``t < T`` are the balances the enable signals see at
  step ``t`` (previous balance + recharge at ``t`` - spend of step ``t-1``).
* ``z[T]`` is the balance one step past the window; it includes
  ``next_real_recharge`` (the top-up landing on that step, if any) and decides
  the look-ahead enable of the final step.
* ``enables_real`` has ``T + 1`` columns for the same reason.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from ..domain import LoadSpec, PriorityFactors, TimeGrid, ValidationError, priority_factors
from ..simkernel import DEFAULT_EPS, ThresholdPlan, WalletState

CHECK_TOL = 1e-9


class InfeasibleInstance(RuntimeError):
    """No assignment satisfies the constraints (should not happen for sane data)."""


@dataclass(frozen=True)
class ModelInstance:
    grid: TimeGrid
    loads: tuple[LoadSpec, ...]
    power: np.ndarray
    rate: np.ndarray
    real_recharge: np.ndarray
    virtual_recharge: np.ndarray
    initial: WalletState = WalletState()
    next_real_recharge: float = 0.0
    eps: float = DEFAULT_EPS
    big_m: float = float("nan")
    threshold_floor: float | None = 0.0
    gamma: PriorityFactors = field(default=None)

    def __post_init__(self):
        T = self.grid.total_steps
        power = np.array(self.power, dtype=float, copy=True).reshape(len(self.loads), -1)
        arrays = {
            "rate": np.array(self.rate, dtype=float, copy=True),
            "real_recharge": np.array(self.real_recharge, dtype=float, copy=True),
            "virtual_recharge": np.array(self.virtual_recharge, dtype=float, copy=True),
        }
        if power.shape[1] != T:
            raise ValidationError(f"power has {power.shape[1]} steps, window has {T}")
        if np.any(power < 0):
            raise ValidationError("power must be >= 0")
        for name, arr in arrays.items():
            if arr.shape != (T,):
                raise ValidationError(f"{name} must have one value per step")
        if np.any(arrays["rate"] <= 0):
            raise ValidationError("rates must be positive")
        if self.eps <= 0:
            raise ValidationError("eps must be positive")
        for name, arr in [("power", power), *arrays.items()]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "loads", tuple(self.loads))
        if self.gamma is None:
            object.__setattr__(self, "gamma", priority_factors({l.id: l.priority_rank for l in self.loads}))
        if math.isnan(self.big_m):
            object.__setattr__(self, "big_m", compute_big_m(self)[0])

    @property
    def big_m_neg(self) -> float:
        return -self.big_m

    @property
    def load_ids(self) -> tuple[str, ...]:
        return tuple(l.id for l in self.loads)

    @property
    def num_loads(self) -> int:
        return len(self.loads)

    @property
    def demand(self) -> np.ndarray:
        return (self.power > 0).astype(np.int8)

    @property
    def cost(self) -> np.ndarray:
        """Dollars charged for running each load for one step."""
        return self.power * self.rate[None, :] * self.grid.step_hours

    def gamma_vector(self) -> np.ndarray:
        return np.array([self.gamma[k] for k in self.load_ids])


def compute_big_m(instance) -> tuple[float, float]:
    """Big-M bound covering every balance (and every balance-threshold gap) reachable in the window."""
    dt = instance.grid.step_hours
    spend = float(np.max(instance.rate, initial=0.0) * dt * np.sum(instance.power))
    m = (
        float(np.sum(instance.real_recharge))
        + float(np.sum(instance.virtual_recharge))
        + spend
        + 1.0
        + abs(instance.initial.real_balance)
        + abs(instance.initial.virtual_balance)
        + abs(instance.next_real_recharge)
    )
    return m, -m


@dataclass
class Assignment:
    actuation: np.ndarray
    enables_virtual: np.ndarray
    enables_real: np.ndarray
    z: np.ndarray
    x: np.ndarray
    thresholds: ThresholdPlan
    objective: float
    optimal: bool = True
    stats: dict = field(default_factory=dict)


def balances_from_actuation(instance: ModelInstance, actuation) -> tuple[np.ndarray, np.ndarray]:
    """Real and virtual balance series (length ``T + 1``) implied by a fixed actuation matrix."""
    a = np.asarray(actuation)
    spend = (instance.cost * a).sum(axis=0)
    paid = np.concatenate(([0.0], np.cumsum(spend)))
    real_in = np.cumsum(np.append(instance.real_recharge, instance.next_real_recharge))
    virt_in = np.cumsum(np.append(instance.virtual_recharge, 0.0))
    z = instance.initial.real_balance + real_in - paid
    x = instance.initial.virtual_balance + virt_in - paid
    return z, x


def real_enables(z: np.ndarray, eps: float) -> np.ndarray | None:
    """Forced real-enable signal, or None when some balance sits inside the (0, eps) gap."""
    if np.any((z > 0) & (z < eps)):
        return None
    return (z >= eps).astype(np.int8)


def pick_threshold(lo: float, hi: float, free_balances, eps: float) -> float | None:
    """A threshold in ``[lo, hi]`` outside every open gap ``(b, b + eps)`` of a free balance ``b``.

    Prefers the midpoint (``lo + eps`` when unbounded above, ``hi - 1`` when
    unbounded below); None when no such value exists.
    """
    if lo > hi:
        return None
    if math.isfinite(lo) and math.isfinite(hi):
        preferred = 0.5 * (lo + hi)
    elif math.isfinite(lo):
        preferred = lo + eps
    elif math.isfinite(hi):
        preferred = hi - 1.0
    else:
        preferred = 0.0
    free = np.asarray(free_balances, dtype=float)

    def ok(v):
        return lo <= v <= hi and not np.any((free < v) & (v < free + eps))

    if ok(preferred):
        return float(preferred)
    cands = [c for c in (lo, hi, *free, *(free + eps)) if math.isfinite(c) and ok(c)]
    if not cands:
        return None
    return float(min(cands, key=lambda c: (abs(c - preferred), c)))


def threshold_feasible(instance: ModelInstance, actuation, *, balances=None) -> ThresholdPlan | None:
    """Thresholds realising ``actuation`` under the constraint set, or None if none exist.

    For each (load, day) the threshold must lie at or below the virtual
    balance of every step the load runs, at least ``eps`` above the balance
    of every demanded step it is forced off, at or above the threshold floor,
    and outside the indicator gap of every other step.
    """
    a = np.asarray(actuation).astype(np.int8)
    d = instance.demand
    if a.shape != d.shape or np.any(a > d) or np.any(a < 0):
        return None
    z, x = balances_from_actuation(instance, a) if balances is None else balances
    uz = real_enables(z, instance.eps)
    if uz is None:
        return None
    now, nxt = uz[:-1], uz[1:]
    if np.any((a == 1) & ((now == 0) | (nxt == 0))[None, :]):
        return None

    eps = instance.eps
    floor = -math.inf if instance.threshold_floor is None else instance.threshold_floor
    S = instance.grid.steps_per_day
    th = np.empty((instance.num_loads, instance.grid.num_days))
    forced_pool = (d == 1) & (a == 0) & (now == 1) & (nxt == 1)
    for k in range(instance.num_loads):
        for day in range(instance.grid.num_days):
            sl = slice(day * S, (day + 1) * S)
            xs = x[:-1][sl]
            on = a[k, sl] == 1
            off = forced_pool[k, sl]
            free = ~on & ~off
            hi = float(xs[on].min()) if on.any() else math.inf
            lo = max(floor, float(xs[off].max()) + eps if off.any() else -math.inf)
            value = pick_threshold(lo, hi, xs[free], eps)
            if value is None:
                return None
            th[k, day] = value
    return ThresholdPlan(instance.load_ids, th)


def virtual_enables(instance: ModelInstance, x: np.ndarray, plan: ThresholdPlan) -> np.ndarray:
    per_step = np.repeat(plan.thresholds, instance.grid.steps_per_day, axis=1)
    return (x[None, :-1] >= per_step).astype(np.int8)


def objective_value(instance: ModelInstance, actuation) -> float:
    """Priority-weighted service factor; loads with no demand in the window count as served."""
    a = np.asarray(actuation)
    d = instance.demand
    total = d.sum(axis=1)
    sf = np.where(total > 0, a.sum(axis=1) / np.maximum(total, 1), 1.0)
    # a convex combination; clamp the round-off of the weighted sum
    return min(1.0, max(0.0, float(instance.gamma_vector() @ sf)))


def objective_exact(instance: ModelInstance, actuation) -> Fraction:
    a = np.asarray(actuation)
    d = instance.demand
    out = Fraction(0)
    for k, load_id in enumerate(instance.load_ids):
        total = int(d[k].sum())
        sf = Fraction(int(a[k].sum()), total) if total else Fraction(1)
        out += instance.gamma.exact(load_id) * sf
    return out


def assignment_from_actuation(instance: ModelInstance, actuation, *, optimal=True, stats=None) -> Assignment | None:
    a = np.asarray(actuation).astype(np.int8)
    z, x = balances_from_actuation(instance, a)
    plan = threshold_feasible(instance, a, balances=(z, x))
    if plan is None:
        return None
    uz = np.tile(real_enables(z, instance.eps), (instance.num_loads, 1))
    return Assignment(
        actuation=a,
        enables_virtual=virtual_enables(instance, x, plan),
        enables_real=uz,
        z=z,
        x=x,
        thresholds=plan,
        objective=objective_value(instance, a),
        optimal=optimal,
        stats=dict(stats or {}),
    )


def check_feasible(instance: ModelInstance, assignment: Assignment, tol: float = CHECK_TOL) -> tuple[bool, str | None]:
    """Evaluate every constraint of the formulation literally, with big-M and eps.

    Returns ``(True, None)`` or ``(False, name_of_first_violated_constraint)``.
    """
    K, T = instance.num_loads, instance.grid.total_steps
    a = np.asarray(assignment.actuation)
    ux = np.asarray(assignment.enables_virtual)
    uz = np.asarray(assignment.enables_real)
    z = np.asarray(assignment.z, dtype=float)
    x = np.asarray(assignment.x, dtype=float)
    if a.shape != (K, T) or ux.shape != (K, T) or uz.shape != (K, T + 1) or z.shape != (T + 1,) or x.shape != (T + 1,):
        return False, "shape"
    for name, arr in (("actuation-binary", a), ("virtual-enable-binary", ux), ("real-enable-binary", uz)):
        if not np.all((arr == 0) | (arr == 1)):
            return False, name

    M, m, eps = instance.big_m, instance.big_m_neg, instance.eps
    d = instance.demand
    cost = instance.cost
    spend = (cost * a).sum(axis=0)

    z_prev = np.concatenate(([instance.initial.real_balance], z[:-1]))
    x_prev = np.concatenate(([instance.initial.virtual_balance], x[:-1]))
    spend_prev = np.concatenate(([0.0], spend))
    real_in = np.append(instance.real_recharge, instance.next_real_recharge)
    virt_in = np.append(instance.virtual_recharge, 0.0)
    if np.any(np.abs(z - (z_prev + real_in - spend_prev)) > tol):
        return False, "real-wallet-update"
    if np.any(np.abs(x - (x_prev + virt_in - spend_prev)) > tol):
        return False, "virtual-wallet-update"

    if np.any(m * uz > -z[None, :] + tol):
        return False, "real-enable-upper"
    if np.any((M + eps) * (1 - uz) < eps - z[None, :] - tol):
        return False, "real-enable-lower"

    theta = np.repeat(assignment.thresholds.thresholds, instance.grid.steps_per_day, axis=1)
    if theta.shape != (K, T):
        return False, "threshold-shape"
    if instance.threshold_floor is not None and np.any(theta < instance.threshold_floor - tol):
        return False, "threshold-floor"
    xt = x[None, :T]
    if np.any(xt - theta + eps > (M + eps) * ux + tol):
        return False, "virtual-enable"
    if np.any(xt - theta < m * (1 - ux) - tol):
        return False, "virtual-disable"

    if np.any(a > d * ux):
        return False, "actuation-demand"
    if np.any(a > uz[:, :T]):
        return False, "actuation-real-now"
    if np.any(a > uz[:, 1:]):
        return False, "actuation-real-next"
    if np.any(d * ux + uz[:, :T] + uz[:, 1:] > 2 + a):
        return False, "actuation-forced-on"

    if abs(objective_value(instance, a) - assignment.objective) > 1e-9:
        return False, "objective"
    return True, None


def check_day_start_recharges(instance: ModelInstance) -> None:
    S = instance.grid.steps_per_day
    mask = np.ones(instance.grid.total_steps, dtype=bool)
    mask[::S] = False
    if np.any(instance.real_recharge[mask] != 0) or np.any(instance.virtual_recharge[mask] != 0):
        raise ValidationError("recharges must land on the first step of a day")


def dump_instance(instance: ModelInstance, path) -> None:
    """Write a JSON key-value document that :func:`load_instance` reads back exactly."""
    doc = {
        "step_hours": instance.grid.step_hours,
        "steps_per_day": instance.grid.steps_per_day,
        "num_days": instance.grid.num_days,
        "loads": [
            {"id": l.id, "name": l.name, "priority_rank": l.priority_rank, "max_power": l.max_power}
            for l in instance.loads
        ],
        "power": [[float(v).hex() for v in row] for row in instance.power],
        "rate": [float(v).hex() for v in instance.rate],
        "real_recharge": [float(v).hex() for v in instance.real_recharge],
        "virtual_recharge": [float(v).hex() for v in instance.virtual_recharge],
        "initial_real": float(instance.initial.real_balance).hex(),
        "initial_virtual": float(instance.initial.virtual_balance).hex(),
        "next_real_recharge": float(instance.next_real_recharge).hex(),
        "eps": float(instance.eps).hex(),
        "big_m": float(instance.big_m).hex(),
        "threshold_floor": None if instance.threshold_floor is None else float(instance.threshold_floor).hex(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_instance(path) -> ModelInstance:
    with open(path) as fh:
        doc = json.load(fh)
    h = float.fromhex
    grid = TimeGrid(doc["step_hours"], doc["steps_per_day"], doc["num_days"])
    floor = doc.get("threshold_floor")
    return ModelInstance(
        grid=grid,
        loads=tuple(LoadSpec(**l) for l in doc["loads"]),
        power=np.array([[h(v) for v in row] for row in doc["power"]]),
        rate=np.array([h(v) for v in doc["rate"]]),
        real_recharge=np.array([h(v) for v in doc["real_recharge"]]),
        virtual_recharge=np.array([h(v) for v in doc["virtual_recharge"]]),
        initial=WalletState(h(doc["initial_real"]), h(doc["initial_virtual"])),
        next_real_recharge=h(doc["next_real_recharge"]),
        eps=h(doc["eps"]),
        big_m=h(doc["big_m"]),
        threshold_floor=None if floor is None else h(floor),
    )


def instance_from_arrays(
    loads: Sequence[LoadSpec],
    power,
    *,
    grid: TimeGrid,
    rate,
    real_recharge,
    virtual_recharge,
    **kwargs,
) -> ModelInstance:
    rate = np.broadcast_to(np.asarray(rate, dtype=float), (grid.total_steps,))
    return ModelInstance(grid=grid, loads=tuple(loads), power=power, rate=rate,
                         real_recharge=real_recharge, virtual_recharge=virtual_recharge, **kwargs)
