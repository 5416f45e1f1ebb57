#!/usr/bin/env python3
"""Run the experiment described in experiment.toml (which points at household.toml)."""

from pathlib import Path

from prepaid_ration.rollout import load_experiment_config, run_experiment

config = load_experiment_config(Path(__file__).with_name("experiment.toml"))
rep = run_experiment(config).report
print(f"{config.policy.name}, {config.recharge_fraction:.0%} budget in {config.recharge_frequency} recharges")
print(f"PSF {rep.psf:.4f}, energy served {rep.total_energy_fraction:.3f}, disconnections {rep.disconnection_count}")
print({k: round(v, 3) for k, v in rep.sf.items()})
