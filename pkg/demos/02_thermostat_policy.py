"""Solve the thermostat and read off the heating threshold.

Forty statistics are sampled by random exploration, every one is backed up
at every step, and the resulting alpha-function sets give both a value
(a lower estimate of the probability of staying in the band) and the first
action. The first action switches from heat to off at a single initial
mean. Monte Carlo runs of the closed loop show how the value compares with
simulation.

Run with ``python3 demos/02_thermostat_policy.py [horizon] [n_runs]``
(defaults 5 and 300; horizon 20 takes about half a minute to solve).
"""

import sys
import time

import numpy as np

from podreach import build_thermostat, pbvi
from podreach.simkit import simulate

T = int(sys.argv[1]) if len(sys.argv) > 1 else 5
n_runs = int(sys.argv[2]) if len(sys.argv) > 2 else 300

model = build_thermostat()
t0 = time.perf_counter()
beliefs = pbvi.sample_belief_set(model, 40, T, seed=0)
stack = pbvi.solve(model, beliefs, T, reduce_to=20)
print(f"T={T}: solved in {time.perf_counter() - t0:.1f}s, alpha sets of size {stack.sizes()}")

# First action against the initial mean.
grid = np.round(np.arange(17.6, 21.9 + 1e-9, 0.05), 10)
actions = [stack.value(pbvi.initial_statistic(model, mu))[1] for mu in grid]
switch = [k for k in range(1, grid.size) if actions[k] != actions[k - 1]]
for k in switch:
    print(f"first action changes from {actions[k - 1]} to {actions[k]} between {grid[k - 1]} and {grid[k]}")

# Value against simulation.
print(f"{'mu0':>6} {'value':>7} {'simulated':>10} {'stderr':>7} {'u0':>3}")
for k, mu in enumerate((17.6, 18.2, 19.0, 19.75, 20.6, 21.4, 21.9)):
    v, u0 = stack.value(pbvi.initial_statistic(model, mu))
    est, se, _ = simulate(model, stack, mu, T, n_runs=n_runs, seed=[T, k])
    print(f"{mu:6.2f} {v:7.3f} {est:10.3f} {se:7.3f} {u0:3d}")

# How far fresh statistics lie from the nearest sampled one (an estimate, not a bound).
print("sampling-density estimate of the belief set:",
      f"{pbvi.delta_diagnostic(beliefs, pbvi.sample_belief_set(model, 5, T, seed=[0, 1])):.3f}")
