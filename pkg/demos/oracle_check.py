#!/usr/bin/env python3
"""The branch-and-bound solver against exhaustive search on small random windows."""

import time

import numpy as np

from prepaid_ration.milp import brute_force, objective_exact, random_instance, solve

rng = np.random.default_rng(7)
t0 = time.perf_counter()
worst = 0
for i in range(100):
    inst = random_instance(rng, num_loads=2, num_steps=10, num_days=2)
    fast, slow = solve(inst), brute_force(inst)
    # objectives are compared as exact fractions, so equality means equality
    if objective_exact(inst, fast.actuation) != objective_exact(inst, slow.actuation):
        worst += 1
        print("mismatch on instance", i)
print(f"100 instances, {worst} mismatches, {time.perf_counter() - t0:.1f}s")
