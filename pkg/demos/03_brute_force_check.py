"""Point-based solution against exhaustive search on a tiny model.

With near-point-mass dynamics every statistic reachable in two steps is a
handful of spikes, so the optimal two-step value can be computed by
enumerating actions, observation cells and mode switches. Backing up the
initial statistic and its one-step successors reproduces that value.

Run with ``python3 demos/03_brute_force_check.py``.
"""

import itertools

import numpy as np

from podreach import HybridModel, HybridMixture, fit_indicator, pbvi
from podreach.belief import init, update
from podreach.hsmodel import DiscretizedObservation

VAR = 1e-8
lo, hi = 0.5, 3.0
# Two modes shift the state by -0.6 and +0.6; action 1 favours the upward mode.
model = HybridModel(
    A=np.eye(1),
    f=np.array([[[-0.6], [-0.6]], [[0.6], [0.6]]]),
    W=np.full((2, 2, 1, 1), VAR),
    Tq=np.array([[[0.8, 0.2], [0.8, 0.2]], [[0.3, 0.7], [0.3, 0.7]]]),
    obs_x=DiscretizedObservation.build(0.5, 2.5, 1.0, 1.0, 0.3),
    safe_lower=np.array([lo]), safe_upper=np.array([hi]), safe_modes=(0, 1),
    indicator=fit_indicator([lo], [hi], (0, 1), 2, 8), name="two-shift")
ind = model.indicator.mixture


def gauss(x, m, v):
    return np.exp(-0.5 * (x - m) ** 2 / v) / np.sqrt(2 * np.pi * v)


def likelihood(y, u, x):
    w, m, S = model.observation(u).arrays(y)
    return float(np.sum(w * gauss(x, m[:, 0], S[:, 0, 0])))


def brute(atoms, steps):
    """Best expected fitted-indicator mass of the spike list ``atoms``."""
    if steps == 0:
        return sum(w * float(ind(x, q)) for x, q, w in atoms)
    best = -np.inf
    for u in range(2):
        total = 0.0
        for y in range(model.N_yx):
            nxt = [(x + model.f[qn, u, 0], qn, w * float(ind(x, q)) * model.Tq[u, q, qn]
                    * likelihood(y, u, x + model.f[qn, u, 0]))
                   for (x, q, w), qn in itertools.product(atoms, range(2))]
            total += brute(nxt, steps - 1)
        best = max(best, total)
    return best


for x0 in (1.0, 1.5, 2.4):
    s0 = init(HybridMixture.single_mode([1.0], [[x0]], [[[VAR]]]), q0=0, n_modes=2)
    beliefs = [s0] + [s for s in (update(model, s0, y, u, reduce_to=None)
                                  for u in range(2) for y in range(model.N_yx)) if not s.dead]
    stack = pbvi.solve(model, beliefs, 2, reduce_to=None)
    v, u = stack.value(s0, clamp=False)
    ref = brute([(x0, 0, 1.0)], 2)
    print(f"x0={x0}: point-based {v:.6f} (first action {u}), enumeration {ref:.6f}, gap {abs(v - ref):.1e}")
