"""Helpers shared by the test modules: replaying model instances and an independent big-M model."""

from dataclasses import replace

import numpy as np

from prepaid_ration.domain import LoadTrace, RechargeSchedule, Tariff
from prepaid_ration.milp import ModelInstance
from prepaid_ration.simkernel import simulate


def without_lookahead(instance: ModelInstance) -> ModelInstance:
    # the simulator only sees recharges inside its grid
    return replace(instance, next_real_recharge=0.0, big_m=float("nan"))


def replay(instance: ModelInstance, plan, *, protective_shed=True):
    traces = [LoadTrace(k, row) for k, row in zip(instance.load_ids, instance.power)]
    recharges = RechargeSchedule(instance.real_recharge, instance.virtual_recharge)
    return simulate(plan, traces, Tariff(instance.rate), recharges, instance.grid, instance.initial,
                    eps=instance.eps, protective_shed=protective_shed)


class BigM:
    """The threshold-selection problem written out as a dense big-M MILP for scipy.optimize.milp.

    Variable layout: a (K*T), ux (K*T), uz (T+1), z (T+1), x (T+1), theta (K*W).
    ``fixed_actuation`` pins ``a`` to a given matrix (feasibility check only).
    """

    def __init__(self, instance: ModelInstance, fixed_actuation=None):
        from scipy.optimize import Bounds, LinearConstraint

        K, T = instance.num_loads, instance.grid.total_steps
        W, S = instance.grid.num_days, instance.grid.steps_per_day
        self.K, self.T, self.W = K, T, W
        n_a = K * T
        o_a, o_ux, o_uz = 0, n_a, 2 * n_a
        o_z = o_uz + T + 1
        o_x = o_z + T + 1
        o_th = o_x + T + 1
        n = o_th + K * W
        self.n = n
        self.o_z, self.o_x, self.o_th = o_z, o_x, o_th

        def A(k, t):
            return o_a + k * T + t

        def UX(k, t):
            return o_ux + k * T + t

        M, m, eps = instance.big_m, instance.big_m_neg, instance.eps
        d = instance.demand
        cost = instance.cost
        rows, lo, hi = [], [], []

        def add(coeffs, lb, ub):
            r = np.zeros(n)
            for j, v in coeffs:
                r[j] += v
            rows.append(r)
            lo.append(lb)
            hi.append(ub)

        real_in = np.append(instance.real_recharge, instance.next_real_recharge)
        virt_in = np.append(instance.virtual_recharge, 0.0)
        add([(o_z, 1.0)], instance.initial.real_balance + real_in[0], instance.initial.real_balance + real_in[0])
        add([(o_x, 1.0)], instance.initial.virtual_balance + virt_in[0],
            instance.initial.virtual_balance + virt_in[0])
        for t in range(T):
            spend = [(A(k, t), cost[k, t]) for k in range(K)]
            add([(o_z + t + 1, 1.0), (o_z + t, -1.0)] + spend, real_in[t + 1], real_in[t + 1])
            add([(o_x + t + 1, 1.0), (o_x + t, -1.0)] + spend, virt_in[t + 1], virt_in[t + 1])
        for t in range(T + 1):
            # z <= M uz  and  z >= eps - (M + eps)(1 - uz)
            add([(o_z + t, 1.0), (o_uz + t, -M)], -np.inf, 0.0)
            add([(o_z + t, 1.0), (o_uz + t, -(M + eps))], eps - (M + eps), np.inf)
        for k in range(K):
            for t in range(T):
                th = o_th + k * W + t // S
                # x - theta + eps <= (M + eps) ux ;  x - theta >= m (1 - ux)
                add([(o_x + t, 1.0), (th, -1.0), (UX(k, t), -(M + eps))], -np.inf, -eps)
                add([(o_x + t, 1.0), (th, -1.0), (UX(k, t), m)], m, np.inf)
                add([(A(k, t), 1.0), (UX(k, t), -float(d[k, t]))], -np.inf, 0.0)
                add([(A(k, t), 1.0), (o_uz + t, -1.0)], -np.inf, 0.0)
                add([(A(k, t), 1.0), (o_uz + t + 1, -1.0)], -np.inf, 0.0)
                add([(UX(k, t), float(d[k, t])), (o_uz + t, 1.0), (o_uz + t + 1, 1.0), (A(k, t), -1.0)],
                    -np.inf, 2.0)
        self.constraints = LinearConstraint(np.array(rows), np.array(lo), np.array(hi))

        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        lb[:o_z] = 0
        ub[:o_z] = 1
        floor = instance.threshold_floor
        lb[o_th:] = -M if floor is None else floor
        ub[o_th:] = M
        if fixed_actuation is not None:
            fa = np.asarray(fixed_actuation, dtype=float).reshape(-1)
            lb[:n_a] = fa
            ub[:n_a] = fa
        self.bounds = Bounds(lb, ub)
        self.integrality = np.zeros(n)
        self.integrality[:o_z] = 1

        totals = d.sum(axis=1)
        gam = instance.gamma_vector()
        c = np.zeros(n)
        for k in range(K):
            if totals[k]:
                c[o_a + k * T: o_a + (k + 1) * T] = -gam[k] / totals[k]
        self.c = c
        self.constant = float(sum(g for g, n_k in zip(gam, totals) if n_k == 0))

    def solve(self):
        from scipy.optimize import milp

        res = milp(self.c, constraints=self.constraints, integrality=self.integrality, bounds=self.bounds,
                   options={"mip_rel_gap": 0.0, "presolve": True})
        return res

    def objective(self, res) -> float:
        return self.constant - float(res.fun)


def small_household(seed, *, num_loads=3, steps_per_day=8, num_days=3, density=0.4, periodic=False):
    """(grid, loads, traces) of a random household on a coarse grid."""
    from prepaid_ration.domain import LoadSpec, build_time_grid

    rng = np.random.default_rng(seed)
    grid = build_time_grid(1440 // steps_per_day, num_days)
    days = 1 if periodic else num_days
    power = rng.uniform(100, 2000, (num_loads, steps_per_day * days))
    power *= rng.random(power.shape) < density
    power = np.tile(power, (1, num_days // days))
    ranks = rng.permutation(num_loads) + 1
    loads = tuple(LoadSpec(f"L{k}", f"load {k}", int(r)) for k, r in enumerate(ranks))
    traces = tuple(LoadTrace(l.id, p) for l, p in zip(loads, power))
    return grid, loads, traces
