"""Exact threshold optimisation by day-layered branch-and-bound.

Two facts make the problem small.  Within a day nothing is recharged, so the
virtual balance only falls; a load whose threshold is fixed for the day is
therefore enabled on a prefix of the day and off afterwards.  Its whole daily
decision collapses to *how many of its demanded steps it serves*, and any
count is realisable by a threshold as long as the balance drops by at least
``eps`` between the last served and the first refused step.  Second, both
wallets are charged the same spend, so ``z - x`` is fixed by the recharge
schedule and the state carried from one day to the next is a single number.

The search expands one day at a time.  A node is (balance at the start of the
day, objective earned so far); its children are the feasible per-load serve
counts of the day, enumerated load by load in descending weight.  Nodes are
discarded when another node of the same day has at least as much money and at
least as much objective (dominance), or when the objective earned plus a
fractional-knapsack bound on what the remaining money can still buy cannot
beat the best objective already guaranteed.  The guarantee comes from
completing the most promising nodes greedily (each later day takes its most
valuable affordable plan); switching everything off is the fallback.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .model import (
    Assignment,
    InfeasibleInstance,
    ModelInstance,
    assignment_from_actuation,
    balances_from_actuation,
    check_day_start_recharges,
    real_enables,
)

log = logging.getLogger(__name__)

_CHUNK = 1 << 21
_BEAM_WIDTH = 4000
_ROLLOUTS = 32
_MAX_LCM = 1 << 40


@dataclass
class _DayPlans:
    counts: np.ndarray  # (P, K) demanded steps served per load
    spend: np.ndarray  # (P,)
    need_z: np.ndarray  # minimum real balance at the day start
    need_x: np.ndarray  # minimum virtual balance at the day start
    value: np.ndarray  # (P,) scaled objective gained


def _objective_weights(instance: ModelInstance, totals: np.ndarray):
    """Per-step objective gain of every load, as exact integers when the scale allows."""
    ranks = [l.priority_rank for l in instance.loads]
    denoms = [r * int(n) for r, n in zip(ranks, totals) if n > 0]
    lcm = 1
    for q in denoms:
        lcm = lcm * q // math.gcd(lcm, q)
        if lcm > _MAX_LCM:
            break
    if lcm <= _MAX_LCM:
        w = np.array([lcm // (r * int(n)) if n > 0 else 0 for r, n in zip(ranks, totals)], dtype=np.int64)
        return w, float(lcm), True
    gam = instance.gamma_vector()
    w = np.array([g / n if n > 0 else 0.0 for g, n in zip(gam, totals)])
    return w, 1.0, False


def _enumerate_day(instance, day, weights, cost, demand, z_next, floor):
    S = instance.grid.steps_per_day
    sl = slice(day * S, (day + 1) * S)
    eps = instance.eps
    K = instance.num_loads
    order = np.argsort(-instance.gamma_vector(), kind="stable")

    served_rows = []
    for k in range(K):
        idx = np.flatnonzero(demand[k, sl])
        c = cost[k, sl][idx]
        rows = np.zeros((len(idx) + 1, S))
        if len(idx):
            rows[1:, idx] = np.tril(np.ones((len(idx), len(idx)))) * c[None, :]
        served_rows.append((idx, rows))

    sizes = [len(served_rows[k][0]) + 1 for k in order]
    grids = np.indices(sizes).reshape(len(order), -1).T
    counts = np.zeros((grids.shape[0], K), dtype=np.int64)
    counts[:, order] = grids

    nxt = np.zeros(S)
    nxt[-1] = z_next
    parts = []
    for lo in range(0, counts.shape[0], max(1, _CHUNK // S)):
        cnt = counts[lo: lo + max(1, _CHUNK // S)]
        per_step = np.zeros((cnt.shape[0], S))
        for k in range(K):
            per_step += served_rows[k][1][cnt[:, k]]
        through = np.cumsum(per_step, axis=1)
        before = through - per_step
        on = per_step > 0
        need_z = np.where(on, np.maximum(before + eps, through + eps - nxt), -np.inf).max(axis=1)
        if floor is None:
            need_x = np.full(cnt.shape[0], -np.inf)
        else:
            need_x = floor + np.where(on, before, -np.inf).max(axis=1)
        ok = np.ones(cnt.shape[0], dtype=bool)
        rows = np.arange(cnt.shape[0])
        for k in range(K):
            idx = served_rows[k][0]
            n = cnt[:, k]
            cut = (n > 0) & (n < len(idx))
            if cut.any():
                last_on = idx[n[cut] - 1]
                first_off = idx[n[cut]]
                drop = before[rows[cut], first_off] - before[rows[cut], last_on]
                ok[cut] &= drop >= eps
        value = cnt @ weights
        parts.append((cnt[ok], through[ok, -1], need_z[ok], need_x[ok], value[ok]))
    return _DayPlans(*(np.concatenate(p) for p in zip(*parts)))


def _greedy_completion(all_plans, day, z, x, v, Zd, Xd):
    """Objective reached from nodes at the start of ``day`` by taking each day's best affordable plan."""
    W = len(all_plans)
    z, x, v = z.copy(), x.copy(), v.copy()
    for d in range(day, W):
        plans = all_plans[d]
        zn = Zd[d + 1] if d + 1 < W else 0.0
        xn = Xd[d + 1] if d + 1 < W else 0.0
        feas = (z[:, None] >= plans.need_z[None, :]) & (x[:, None] >= plans.need_x[None, :])
        # plans are sorted by value (desc), then spend (asc); the all-off plan is always affordable
        pick = np.argmax(feas, axis=1)
        z = z - plans.spend[pick] + zn
        x = x - plans.spend[pick] + xn
        v = v + plans.value[pick]
    return v


def _useful_plans(plans: _DayPlans, prune: bool = True) -> _DayPlans:
    """Sort plans by value (desc) then spend (asc) and, with ``prune``, drop plans another plan
    beats on value, spend and both balance requirements."""
    order = np.lexsort((plans.spend, -plans.value))
    if not prune or len(order) <= 4096:
        # small days are cheaper to expand than to prune
        return _DayPlans(plans.counts[order], plans.spend[order], plans.need_z[order], plans.need_x[order],
                         plans.value[order])
    cost = np.column_stack((plans.spend, plans.need_z, plans.need_x))[order]
    # dominance is transitive, so comparing against every earlier survivor is enough
    sky = np.empty((0, 3))
    keep = []
    for lo in range(0, len(order), 1024):
        block = cost[lo:lo + 1024]
        alive = np.ones(len(block), dtype=bool)
        for s0 in range(0, len(sky), 1024):
            alive &= ~np.all(sky[None, s0:s0 + 1024, :] <= block[:, None, :], axis=2).any(axis=1)
        idx = np.flatnonzero(alive)
        rest = block[idx]
        beaten = np.tril(np.all(rest[None, :, :] <= rest[:, None, :], axis=2), -1).any(axis=1)
        keep.append(lo + idx[~beaten])
        sky = np.vstack([sky, rest[~beaten]])
    keep = np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)
    idx = order[keep]
    return _DayPlans(plans.counts[idx], plans.spend[idx], plans.need_z[idx], plans.need_x[idx], plans.value[idx])


def _value_bound_tables(instance, weights, cost, demand):
    """For every day d, a fractional-knapsack curve of value obtainable from days >= d."""
    S = instance.grid.steps_per_day
    W = instance.grid.num_days
    w_steps = np.broadcast_to(weights.astype(float)[:, None], cost.shape)
    tables = []
    for d in range(W + 1):
        sl = slice(d * S, None)
        mask = demand[:, sl].astype(bool)
        c = cost[:, sl][mask]
        v = w_steps[:, sl][mask]
        if c.size == 0:
            tables.append((np.zeros(1), np.zeros(1)))
            continue
        order = np.argsort(-(v / c), kind="stable")
        tables.append((np.concatenate(([0.0], np.cumsum(c[order]))),
                       np.concatenate(([0.0], np.cumsum(v[order])))))
    return tables


def _max_step_spend(cost, demand, S, W):
    per_step = (cost * demand).sum(axis=0)
    out = np.zeros(W + 1)
    for d in range(W - 1, -1, -1):
        out[d] = max(out[d + 1], per_step[d * S:(d + 1) * S].max(initial=0.0))
    return out


def _pareto(z, v):
    """Indices of points not dominated in (more money, more value)."""
    order = np.lexsort((-z, -v))
    zs = z[order]
    best = np.maximum.accumulate(zs)
    keep = np.ones(len(order), dtype=bool)
    keep[1:] = zs[1:] > best[:-1]
    return order[keep]


def solve(instance: ModelInstance, *, time_limit: float = 60.0) -> Assignment:
    """Maximise the priority service factor over per-load, per-day thresholds.

    Returns an :class:`Assignment` whose ``optimal`` flag is False only if
    ``time_limit`` seconds ran out and the search fell back to a beam.
    """
    t0 = time.perf_counter()
    check_day_start_recharges(instance)
    z_off, _ = balances_from_actuation(instance, np.zeros_like(instance.demand))
    if real_enables(z_off, instance.eps) is None:
        raise InfeasibleInstance("real balance falls inside the (0, eps) indicator gap with every load off")

    S, W, K = instance.grid.steps_per_day, instance.grid.num_days, instance.num_loads
    cost = instance.cost
    demand = instance.demand.astype(bool)
    totals = demand.sum(axis=1)
    weights, _, exact = _objective_weights(instance, totals)
    floor = instance.threshold_floor

    Zd = np.append(instance.real_recharge[::S], instance.next_real_recharge)
    Xd = np.append(instance.virtual_recharge[::S], 0.0)
    tables = _value_bound_tables(instance, weights, cost, demand)
    max_step = _max_step_spend(cost, demand, S, W)
    z_future = np.concatenate((np.cumsum(Zd[::-1])[::-1], [0.0]))  # z_future[d] = sum Zd[d:]
    x_future = np.concatenate((np.cumsum(Xd[::-1])[::-1], [0.0]))

    sz = np.array([instance.initial.real_balance + Zd[0]])
    sx = np.array([instance.initial.virtual_balance + Xd[0]])
    sv = np.zeros(1, dtype=weights.dtype)
    back = []
    expanded = 0
    peak = 1
    optimal = True
    vtol = 0.0 if exact else 1e-12

    # the first day expands a single node, so pruning its plans would not pay
    all_plans = [_useful_plans(_enumerate_day(instance, d, weights, cost, demand, Zd[d + 1], floor), d > 0)
                 for d in range(W)]
    for d in range(W):
        plans = all_plans[d]
        zn = Zd[d + 1] if d + 1 < W else 0.0
        xn = Xd[d + 1] if d + 1 < W else 0.0
        P = len(plans.spend)
        step_rows = max(1, _CHUNK // max(P, 1))
        pz, px, pv, pp, pl = [], [], [], [], []
        for lo in range(0, len(sz), step_rows):
            hi = lo + step_rows
            feas = (sz[lo:hi, None] >= plans.need_z[None, :]) & (sx[lo:hi, None] >= plans.need_x[None, :])
            i, j = np.nonzero(feas)
            expanded += len(i)
            cz = sz[lo:hi][i] - plans.spend[j] + zn
            cx = sx[lo:hi][i] - plans.spend[j] + xn
            cv = sv[lo:hi][i] + plans.value[j]
            keep = _pareto(cz, cv)
            pz.append(cz[keep]); px.append(cx[keep]); pv.append(cv[keep])
            pp.append(i[keep] + lo); pl.append(j[keep])
        cz, cx, cv = np.concatenate(pz), np.concatenate(px), np.concatenate(pv)
        cp, cl = np.concatenate(pp), np.concatenate(pl)
        keep = _pareto(cz, cv)
        cz, cx, cv, cp, cl = cz[keep], cx[keep], cv[keep], cp[keep], cl[keep]

        if d + 1 < W:
            money = cz + z_future[d + 2] - instance.eps
            if floor is not None:
                money = np.minimum(money, cx + x_future[d + 2] - floor + max_step[d + 1])
            cum_c, cum_v = tables[d + 1]
            bound = cv + np.interp(np.maximum(money, 0.0), cum_c, cum_v)
            probe = np.argsort(-bound, kind="stable")[:_ROLLOUTS]
            incumbent = max(cv.max(), _greedy_completion(all_plans, d + 1, cz[probe], cx[probe], cv[probe],
                                                         Zd, Xd).max())
            keep = bound * (1 + 1e-12) + 1e-9 >= incumbent - vtol
            if time.perf_counter() - t0 > time_limit and keep.sum() > _BEAM_WIDTH:
                optimal = False
                cand = np.flatnonzero(keep)
                keep = cand[np.argsort(-bound[cand], kind="stable")[:_BEAM_WIDTH]]
            cz, cx, cv, cp, cl = cz[keep], cx[keep], cv[keep], cp[keep], cl[keep]

        back.append((cp, cl, plans.counts))
        sz, sx, sv = cz, cx, cv
        peak = max(peak, len(sz))

    best = int(np.lexsort((-sz, -sv))[0])
    counts = np.zeros((W, K), dtype=np.int64)
    for d in range(W - 1, -1, -1):
        parent, plan_idx, plan_counts = back[d]
        counts[d] = plan_counts[plan_idx[best]]
        best = int(parent[best])

    actuation = np.zeros((K, instance.grid.total_steps), dtype=np.int8)
    for d in range(W):
        base = d * S
        for k in range(K):
            idx = np.flatnonzero(demand[k, base:base + S])[: counts[d, k]]
            actuation[k, base + idx] = 1

    stats = {"expanded": int(expanded), "peak_states": int(peak), "seconds": time.perf_counter() - t0,
             "exact_weights": bool(exact)}
    result = assignment_from_actuation(instance, actuation, optimal=optimal, stats=stats)
    if result is None:
        raise InfeasibleInstance("optimal serve counts admit no threshold (indicator gap collision)")
    if not optimal:
        log.warning("threshold solve hit its %.0fs limit; returning beam incumbent", time_limit)
    return result
