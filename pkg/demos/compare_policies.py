#!/usr/bin/env python3
"""Baseline, fixed and optimised thresholds on the same household and budget."""

from prepaid_ration.ingest import load_household
from prepaid_ration.policies import Baseline, FixedThresholds, OptimizedThresholds
from prepaid_ration.rollout import ExperimentConfig, run_experiment

grid, loads, traces = load_household(None, seed=0)

print(f"{'policy':<10}{'PSF':>8}{'energy':>8}{'cutoffs':>9}   per-load service factor")
for policy in (Baseline(), FixedThresholds(), OptimizedThresholds()):
    rep = run_experiment(ExperimentConfig(policy, 0.7, 5, grid, loads, traces)).report
    sf = "  ".join(f"{k}={v:.2f}" for k, v in rep.sf.items())
    print(f"{policy.name:<10}{rep.psf:8.4f}{rep.total_energy_fraction:8.3f}{rep.disconnection_count:9d}   {sf}")

# The baseline spends the whole budget but gets cut off whenever the wallet
# empties; the fixed rule never runs dry but leaves money unspent.
