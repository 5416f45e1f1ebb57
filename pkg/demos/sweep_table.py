#!/usr/bin/env python3
"""PSF and disconnections over recharge amount and frequency for all three policies."""

import os

from prepaid_ration.ingest import load_household
from prepaid_ration.policies import Baseline, FixedThresholds, OptimizedThresholds
from prepaid_ration.rollout import ExperimentConfig, sweep, sweep_grid

grid, loads, traces = load_household(None, seed=0)
base = ExperimentConfig(OptimizedThresholds(), 0.7, 5, grid, loads, traces)
amounts = [0.6, 0.7, 0.8, 0.9, 1.0]
policies = (Baseline(), FixedThresholds(), OptimizedThresholds())

rows = sweep(sweep_grid(base, policies, amounts, [5]), jobs=os.cpu_count())
print("recharge amount, 5 recharges a month")
print(f"{'policy':<10}" + "".join(f"{a:>14.0%}" for a in amounts))
for p in policies:
    cells = [r for r in rows if r.policy == p.name]
    print(f"{p.name:<10}" + "".join(f"{r.report.psf:>9.4f} ({r.report.disconnection_count})" for r in cells))

rows = sweep(sweep_grid(base, policies, [0.7], [1, 3, 5, 7]), jobs=os.cpu_count())
print("\nrecharge frequency, 70% of full-demand cost")
print(f"{'policy':<10}" + "".join(f"{n:>14d}" for n in (1, 3, 5, 7)))
for p in policies:
    cells = [r for r in rows if r.policy == p.name]
    print(f"{p.name:<10}" + "".join(f"{r.report.psf:>9.4f} ({r.report.disconnection_count})" for r in cells))
