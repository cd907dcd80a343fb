"""One step of the safety-aware filter on the thermostat.

The statistic sigma is an unnormalized Gaussian mixture per heater mode.
Integrating it gives the probability that the room is in a region now and
has stayed in the comfort band so far. This script applies one update and
checks it against brute-force quadrature.

Run with ``python3 demos/01_filter_step.py``.
"""

import numpy as np
from scipy.integrate import trapezoid

from podreach import build_thermostat, pbvi
from podreach.belief import safety_mass, update

model = build_thermostat()
obs = model.observation(1)
print(f"safe band [{model.safe_lower[0]}, {model.safe_upper[0]}], "
      f"{model.N_yx} observation cells of width {obs.delta} on [{obs.grid[0]}, {obs.grid[-1]}]")

# Start at 19.75 with the heater off, switch it on and observe the cell
# nearest the expected next temperature.
sigma0 = pbvi.initial_statistic(model, 19.75, s2=0.1, q0=0)
y = int(obs.snap(0.9833 * 19.75 + 0.9002))
print(f"observed cell {y} (temperature {obs.grid[y]:.2f})")

exact = update(model, sigma0, y, 1, reduce_to=None)
reduced = update(model, sigma0, y, 1, reduce_to=20)
for q, name in enumerate(("off", "on")):
    print(f"mode {name}: {exact.mixture.n_components(q)} components exact, "
          f"{reduced.mixture.n_components(q)} after reduction, mass {exact.mixture.mode_weight(q):.5f}")

# Mass is the joint probability of staying safe and seeing this cell; the
# sum over all cells is at most one.
total = sum(update(model, sigma0, k, 1).total_mass for k in range(model.N_yx))
print(f"P(observe cell {y}, safe) = {exact.total_mass:.5f}; summed over cells {total:.5f}")
print(f"mass of the updated statistic inside the band: {safety_mass(model, exact):.5f}")

# Reference: the same integral by the trapezoid rule with the exact band
# indicator and exact cell probabilities.
xs_in = np.linspace(17.5, 22.0, 901)
xs = np.linspace(16.0, 23.5, 400)
cell = obs.cell_probability(y, xs)
worst = 0.0
for qn in range(2):
    f, W = model.f[qn, 1, 0], model.W[qn, 1, 0, 0]
    kern = np.exp(-0.5 * (xs[:, None] - 0.9833 * xs_in[None, :] - f) ** 2 / W) / np.sqrt(2 * np.pi * W)
    ref = cell * model.Tq[1, 0, qn] * trapezoid(kern * sigma0.mixture(xs_in, 0)[None, :], xs_in, axis=1)
    worst = max(worst, np.max(np.abs(exact.mixture(xs, qn) - ref)))
print(f"largest pointwise gap to quadrature: {worst:.2e}")

# A coarse text picture of the heater-on density after the update.
peak = exact.mixture(xs, 1).max()
for x in np.arange(19.5, 21.01, 0.125):
    bar = "#" * int(round(50 * exact.mixture(x, 1) / peak))
    print(f"{x:6.3f} {bar}")
