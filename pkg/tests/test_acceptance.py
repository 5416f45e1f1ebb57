"""Exit criteria, one test each; every test prints a PASS/FAIL line (also collected in the summary)."""

import os
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from prepaid_ration.domain import LoadTrace, RechargeSchedule, Tariff, build_time_grid
from prepaid_ration.milp import brute_force, objective_exact, random_instance, solve
from prepaid_ration.policies import Baseline, FixedThresholds, OptimizedThresholds
from prepaid_ration.rollout import (
    ExperimentConfig,
    build_recharge_schedule,
    full_demand_cost,
    run_experiment,
    sweep,
    sweep_grid,
    window_instance,
)
from prepaid_ration.simkernel import ThresholdPlan, WalletState, simulate

pytestmark = pytest.mark.acceptance

AMOUNTS = [0.6, 0.7, 0.8, 0.9, 1.0]
FREQUENCIES = [1, 3, 5, 7]
POLICIES = (Baseline(), FixedThresholds(), OptimizedThresholds())


def verdict(log, number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    log.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def base(reference_month):
    grid, loads, traces = reference_month
    return ExperimentConfig(OptimizedThresholds(), 0.7, 5, grid, loads, traces)


@pytest.fixture(scope="module")
def grid_runs(base):
    """Every policy x amount x frequency of the reference sweep, keyed by (policy, amount, frequency)."""
    rows = sweep(sweep_grid(base, POLICIES, AMOUNTS, FREQUENCIES), jobs=os.cpu_count())
    return {(r.policy, r.recharge_fraction, r.recharge_frequency): r for r in rows}


def test_1_oracle_equivalence(acceptance_log):
    t0 = time.perf_counter()
    mismatches = []
    for seed in range(200):
        inst = random_instance(np.random.default_rng(seed), num_loads=2, num_steps=8, num_days=2)
        if objective_exact(inst, solve(inst).actuation) != objective_exact(inst, brute_force(inst).actuation):
            mismatches.append(seed)
    seconds = time.perf_counter() - t0
    verdict(acceptance_log, 1, not mismatches and seconds < 300,
            f"solve == brute_force on {200 - len(mismatches)}/200 toy instances in {seconds:.1f}s (limit 300s)")


def test_2_threshold_policies_never_disconnect(acceptance_log, grid_runs):
    bad = [(k, r.error or r.report.disconnection_count) for k, r in grid_runs.items()
           if k[0] != "baseline" and (r.report is None or r.report.disconnection_count != 0)]
    runs = sum(k[0] != "baseline" for k in grid_runs)
    verdict(acceptance_log, 2, not bad, f"{runs - len(bad)}/{runs} fixed/optimal runs with 0 disconnections {bad}")


def test_3_baseline_disconnection_pattern(acceptance_log, grid_runs):
    by_amount = [grid_runs[("baseline", a, 5)].report.disconnection_count for a in AMOUNTS]
    by_freq = [grid_runs[("baseline", 0.7, f)].report.disconnection_count for f in FREQUENCIES]
    target_amount = [3, 3, 1, 1, 1]
    target_freq = [1, 2, 3, 3]
    ok = (all(b <= a for a, b in zip(by_amount, by_amount[1:]))
          and all(b >= a for a, b in zip(by_freq, by_freq[1:]))
          and all(abs(a - b) <= 1 for a, b in zip(by_amount, target_amount))
          and all(abs(a - b) <= 1 for a, b in zip(by_freq, target_freq)))
    verdict(acceptance_log, 3, ok, f"baseline disconnections by amount {by_amount} (target {target_amount}), "
                                   f"by frequency {by_freq} (target {target_freq})")


def test_4_policy_ordering(acceptance_log, grid_runs):
    p = {name: grid_runs[(name, 0.7, 5)].report.psf for name in ("optimal", "baseline", "fixed")}
    verdict(acceptance_log, 4, p["optimal"] > p["baseline"] > p["fixed"],
            f"PSF optimal {p['optimal']:.4f} > baseline {p['baseline']:.4f} > fixed {p['fixed']:.4f} at 70%/5")


def test_5_budget_utilisation(acceptance_log, grid_runs):
    e = {name: grid_runs[(name, 0.7, 5)].report.total_energy_fraction for name in ("optimal", "baseline", "fixed")}
    ok = abs(e["optimal"] - 0.7) <= 0.01 and abs(e["baseline"] - 0.7) <= 0.01 and e["fixed"] <= 0.69
    verdict(acceptance_log, 5, ok, f"energy fraction optimal {e['optimal']:.4f}, baseline {e['baseline']:.4f} "
                                   f"(0.70 +/- 0.01), fixed {e['fixed']:.4f} (<= 0.69)")


def test_6_optimal_energy_pattern(acceptance_log, grid_runs):
    f = grid_runs[("optimal", 0.7, 5)].report.energy_fraction
    ok = f["B"] >= 0.95 and f["C"] >= 0.90 and f["D"] >= 0.95 and f["A"] <= 0.35
    verdict(acceptance_log, 6, ok, "served share washer {B:.3f} (>=0.95), microwave {C:.3f} (>=0.90), "
                                   "fridge {D:.3f} (>=0.95), compressor {A:.3f} (<=0.35)".format(**f))


def test_7_monotonicity(acceptance_log, grid_runs):
    rising = {f: [grid_runs[("optimal", a, f)].report.psf for a in AMOUNTS] for f in FREQUENCIES}
    mono = all(all(b >= a - 1e-12 for a, b in zip(v, v[1:])) for v in rising.values())
    spread = {p: np.ptp([grid_runs[(p, 0.7, f)].report.psf for f in FREQUENCIES]) for p in ("fixed", "optimal")}
    ok = mono and all(s < 0.02 for s in spread.values())
    verdict(acceptance_log, 7, ok, f"optimal PSF nondecreasing in amount at every frequency: {mono}; "
                                   f"PSF range over frequencies fixed {spread['fixed']:.4f}, "
                                   f"optimal {spread['optimal']:.4f} (< 0.02)")


def random_simulation(rng):
    K = int(rng.integers(1, 5))
    S = int(rng.choice([4, 8, 24, 96]))
    D = int(rng.integers(1, 5))
    T = S * D
    grid = build_time_grid(1440 // S, D)
    power = rng.uniform(0, 2500, (K, T)) * (rng.random((K, T)) < rng.uniform(0.1, 1.0))
    full = power.sum() * 0.15 / 1000 * grid.step_hours
    real = np.zeros(T)
    virt = np.zeros(T)
    for d in range(D):
        if d == 0 or rng.random() < 0.3:
            real[d * S] = rng.uniform(0, 1.3) * full / D
        virt[d * S] = rng.uniform(0, 1.0) * full / D
    th = np.where(rng.random((K, D)) < 0.2, -1e12, rng.uniform(0, full / 2 + 1e-9, (K, D)))
    ids = tuple(f"L{k}" for k in range(K))
    initial = WalletState(float(rng.uniform(0, 2)), float(rng.uniform(-1, 2)))
    tariff = Tariff(rng.uniform(0.05, 0.4, T) / 1000)
    recharges = RechargeSchedule(real, virt)
    res = simulate(ThresholdPlan(ids, th), [LoadTrace(i, p) for i, p in zip(ids, power)], tariff, recharges, grid,
                   initial, protective_shed=bool(rng.random() < 0.5))
    spend = (power * res.actuation).sum(axis=0) * tariff.rate_per_wh * grid.step_hours
    return res, initial, recharges, spend


def test_8_conservation(acceptance_log):
    rng = np.random.default_rng(20240601)
    worst_conservation = worst_coupling = 0.0
    for _ in range(1000):
        res, initial, rc, spend = random_simulation(rng)
        expected = initial.real_balance + rc.real.sum() - spend.sum()
        worst_conservation = max(worst_conservation, abs(res.final_state.real_balance - expected))
        z_end = np.array([r.z_end for r in res.records])
        x_end = np.array([r.x_end for r in res.records])
        dz = np.diff(np.concatenate(([initial.real_balance], z_end))) - rc.real
        dx = np.diff(np.concatenate(([initial.virtual_balance], x_end))) - rc.virtual
        worst_coupling = max(worst_coupling, float(np.abs(dz - dx).max()))
    ok = worst_conservation <= 1e-9 and worst_coupling <= 1e-9
    verdict(acceptance_log, 8, ok, f"1000 random simulations: max conservation error {worst_conservation:.2e}, "
                                   f"max spend-coupling error {worst_coupling:.2e} (<= 1e-9)")


def test_9_desk_scale_performance(acceptance_log, base):
    schedule = build_recharge_schedule(base, full_demand_cost(base))
    inst = window_instance(base, schedule, WalletState(), 0, 7)
    t0 = time.perf_counter()
    first = solve(inst)
    one = time.perf_counter() - t0
    t0 = time.perf_counter()
    res = run_experiment(base)
    month = time.perf_counter() - t0
    slowest = max(s["seconds"] for s in res.day_stats if s.get("day") is not None)
    ok = first.optimal and one < 60 and slowest < 60 and month < 1800
    verdict(acceptance_log, 9, ok, f"7-day window solve (4 loads x 96 steps/day) {one:.2f}s, slowest rolling day "
                                   f"{slowest:.2f}s (< 60s); 30-day rolling run {month:.1f}s (< 1800s)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
