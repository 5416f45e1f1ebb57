"""Exhaustive reference solver for tiny instances."""

from __future__ import annotations

import numpy as np

from ..domain import LoadSpec, build_time_grid
from ..simkernel import WalletState
from .model import (
    Assignment,
    InfeasibleInstance,
    ModelInstance,
    assignment_from_actuation,
    check_feasible,
    instance_from_arrays,
)

MAX_CELLS = 20
_BLOCK = 1 << 15


class InstanceTooLarge(ValueError):
    pass


def _decode(codes: np.ndarray, n: int) -> np.ndarray:
    # bit i of the flattened (load, step) matrix is the (n-1-i)-th binary digit,
    # so numeric order of codes equals lexicographic order of matrices
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def _screen(instance: ModelInstance, a: np.ndarray) -> np.ndarray:
    """Vectorised version of the interval test in ``threshold_feasible``, without the gap rule.

    Anything it rejects also fails the scalar test, so it only prunes.
    """
    B, K, T = a.shape
    eps = instance.eps
    cost = instance.cost
    spend = np.einsum("bkt,kt->bt", a, cost)
    paid = np.concatenate((np.zeros((B, 1)), np.cumsum(spend, axis=1)), axis=1)
    real_in = np.cumsum(np.append(instance.real_recharge, instance.next_real_recharge))
    virt_in = np.cumsum(np.append(instance.virtual_recharge, 0.0))
    z = instance.initial.real_balance + real_in[None, :] - paid
    x = instance.initial.virtual_balance + virt_in[None, :] - paid

    ok = ~np.any((z > 0) & (z < eps), axis=1)
    uz = z >= eps
    both = uz[:, :-1] & uz[:, 1:]
    ok &= ~np.any((a == 1) & ~both[:, None, :], axis=(1, 2))

    d = instance.demand.astype(bool)
    forced = d[None] & (a == 0) & both[:, None, :]
    xs = np.broadcast_to(x[:, None, :T], a.shape)
    floor = -np.inf if instance.threshold_floor is None else instance.threshold_floor
    S, W = instance.grid.steps_per_day, instance.grid.num_days
    on_x = np.where(a == 1, xs, np.inf).reshape(B, K, W, S).min(axis=3)
    off_x = np.where(forced, xs, -np.inf).reshape(B, K, W, S).max(axis=3)
    lo = np.maximum(floor, off_x + eps)
    ok &= np.all(lo <= on_x, axis=(1, 2))
    return ok


def brute_force(instance: ModelInstance) -> Assignment:
    """Best actuation over all ``2**(K*T)`` matrices; ties go to the lexicographically smallest.

    A matrix counts when thresholds realising it exist and the resulting full
    assignment passes :func:`check_feasible`.  Matrices that switch a load on
    without demand are skipped up front since they break the demand constraint.
    """
    K, T = instance.num_loads, instance.grid.total_steps
    n = K * T
    if n > MAX_CELLS:
        raise InstanceTooLarge(f"{K} loads x {T} steps = {n} cells exceeds the {MAX_CELLS}-cell cap")

    d_flat = instance.demand.reshape(-1)
    # matrices with a load on where it has no demand break the demand constraint; skip them
    support = [n - 1 - i for i in range(n) if d_flat[i]]
    m = len(support)
    weights = instance.gamma_vector()
    totals = instance.demand.sum(axis=1)

    feasible_codes, feasible_vals = [], []
    sub = np.arange(1 << m, dtype=np.int64)
    for lo in range(0, 1 << m, _BLOCK):
        part = sub[lo: lo + _BLOCK]
        codes = np.zeros_like(part)
        for j, bit in enumerate(reversed(support)):
            codes |= ((part >> j) & 1) << bit
        a = _decode(codes, n).reshape(-1, K, T)
        ok = _screen(instance, a)
        if ok.any():
            sf = np.where(totals > 0, a[ok].sum(axis=2) / np.maximum(totals, 1), 1.0)
            feasible_codes.append(codes[ok])
            feasible_vals.append(sf @ weights)
    if not feasible_codes:
        raise InfeasibleInstance("no actuation matrix passes the interval screen")
    codes = np.concatenate(feasible_codes)
    vals = np.concatenate(feasible_vals)
    order = np.lexsort((codes, -np.round(vals, 12)))
    best = None
    for idx in order:
        a = _decode(codes[idx: idx + 1], n).reshape(K, T)
        cand = assignment_from_actuation(instance, a)
        if cand is not None and check_feasible(instance, cand)[0]:
            best = cand
            break
    if best is None:
        raise InfeasibleInstance("no actuation matrix passes the full constraint check")
    best.stats["enumerated"] = 1 << m
    return best


def random_instance(
    rng: np.random.Generator,
    *,
    num_loads: int = 2,
    num_steps: int = 8,
    num_days: int = 2,
    density: float = 0.6,
    threshold_floor: float | None = 0.0,
) -> ModelInstance:
    """A seeded toy window: sparse random demand, budget between 10% and 120% of full cost.

    Recharges land on day starts, either all on the first day or spread over
    the days, and half of the instances open with a carried-over balance and a
    pending real top-up after the window.
    """
    if num_steps % num_days:
        raise ValueError("num_steps must be a multiple of num_days")
    per_day = num_steps // num_days
    if (24 * 60) % per_day:
        raise ValueError("steps per day must divide a day into whole minutes")
    grid = build_time_grid(24 * 60 // per_day, num_days)
    loads = tuple(LoadSpec(chr(ord("A") + k), f"load {k}", k + 1) for k in range(num_loads))
    rng_ranks = rng.permutation(num_loads) + 1
    loads = tuple(LoadSpec(l.id, l.name, int(r)) for l, r in zip(loads, rng_ranks))
    power = rng.uniform(100, 1500, (num_loads, num_steps)) * (rng.random((num_loads, num_steps)) < density)
    rate = 0.15 / 1000
    full = float(power.sum() * rate * grid.step_hours)
    budget = rng.uniform(0.1, 1.2) * full
    real = np.zeros(num_steps)
    virtual = np.zeros(num_steps)
    starts = [d * per_day for d in range(num_days)]
    if rng.random() < 0.5:
        real[0] = budget
    else:
        real[starts] = budget / num_days
    virtual[starts] = budget / num_days
    initial, nxt = WalletState(), 0.0
    if rng.random() < 0.5:
        z0 = rng.uniform(0, 0.3) * full
        initial = WalletState(z0, z0 * rng.uniform(0, 1))
        nxt = float(rng.choice([0.0, rng.uniform(0, 0.5) * full]))
    return instance_from_arrays(loads, power, grid=grid, rate=rate, real_recharge=real,
                                virtual_recharge=virtual, initial=initial, next_real_recharge=nxt,
                                threshold_floor=threshold_floor)
