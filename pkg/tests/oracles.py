"""Independent reference computations (quadrature, enumeration) used by the tests."""

import math

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from podreach import HybridModel, fit_indicator
from podreach.hsmodel import DiscretizedObservation


def gauss(x, m, var):
    return np.exp(-0.5 * (x - m) ** 2 / var) / np.sqrt(2.0 * math.pi * var)


def exact_indicator(model, x, q):
    x = np.asarray(x, dtype=float)
    inside = (x >= model.safe_lower[0]) & (x <= model.safe_upper[0])
    return inside.astype(float) * (q in model.safe_modes)


def sigma_update_quadrature(model, sigma_mix, yx, u, xs_out, step=5e-3):
    """``x', q' -> sum_q int 1_K(x, q) P(y | x') T(q' | q, u) N(x'; A x + f, W) sigma(x, q) dx``.

    Trapezoid rule over the safe interval with the exact indicator and the
    exact observation-cell probability.
    """
    lo, hi = float(model.safe_lower[0]), float(model.safe_upper[0])
    xs = np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)
    A = float(model.A[0, 0])
    cell = model.observation(u).cell_probability(yx, xs_out)
    out = []
    for qn in range(model.n_modes):
        f = float(model.f[qn, u, 0])
        W = float(model.W[qn, u, 0, 0])
        kern = gauss(xs_out[:, None], A * xs[None, :] + f, W)
        acc = np.zeros(xs_out.size)
        for q in range(model.n_modes):
            p = float(model.Tq[u, q, qn])
            if p == 0.0 or q not in model.safe_modes:
                continue
            acc += p * trapezoid(kern * sigma_mix(xs, q)[None, :], xs, axis=1)
        out.append(cell * acc)
    return out


def alpha_backup_quadrature(model, alpha_next, yx, u, xs_out, step=5e-3, span=6.0):
    """``x, q -> 1fit_K(x, q) sum_q' T(q' | q, u) int alpha(x', q') P(y | x') N(x'; A x + f, W) dx'``.

    ``alpha_next(x, q)`` is any callable; the outer indicator is the fitted
    one, since the backup multiplies by the fitted indicator by definition.
    """
    A = float(model.A[0, 0])
    obs = model.observation(u)
    ind = model.indicator.mixture
    out = []
    for q in range(model.n_modes):
        acc = np.zeros(xs_out.size)
        for qn in range(model.n_modes):
            p = float(model.Tq[u, q, qn])
            if p == 0.0:
                continue
            f = float(model.f[qn, u, 0])
            W = float(model.W[qn, u, 0, 0])
            centre = A * xs_out + f
            lo, hi = centre.min() - span * math.sqrt(W) - 1, centre.max() + span * math.sqrt(W) + 1
            xp = np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)
            g = alpha_next(xp, qn) * obs.cell_probability(yx, xp)
            kern = gauss(xp[None, :], centre[:, None], W)
            acc += p * trapezoid(kern * g[None, :], xp, axis=1)
        out.append(ind(xs_out, q) * acc)
    return out


# ---------------------------------------------------------------------------
# degenerate model with near-point-mass dynamics
# ---------------------------------------------------------------------------

DEGENERATE_VAR = 1e-8


def degenerate_model() -> HybridModel:
    """Two modes that shift the state by -0.6 / +0.6; mode 0 is likelier under u = 0."""
    lo, hi = 0.5, 3.0
    Tq = np.array([[[0.8, 0.2], [0.8, 0.2]],
                   [[0.3, 0.7], [0.3, 0.7]]])
    f = np.array([[[-0.6], [-0.6]], [[0.6], [0.6]]])
    W = np.full((2, 2, 1, 1), DEGENERATE_VAR)
    obs = DiscretizedObservation.build(0.5, 2.5, 1.0, 1.0, 0.3)
    ind = fit_indicator([lo], [hi], (0, 1), 2, 8)
    return HybridModel(A=np.eye(1), f=f, W=W, Tq=Tq, obs_x=obs, safe_lower=np.array([lo]),
                       safe_upper=np.array([hi]), safe_modes=(0, 1), indicator=ind, name="degenerate")


def _likelihood(model, yx, u, x):
    w, m, S = model.observation(u).arrays(yx)
    return float(np.sum(w * gauss(x, m[:, 0], S[:, 0, 0])))


def _at(mix, x, q):
    return float(np.asarray(mix(np.array([x]), q)).reshape(-1)[0])


def enumerate_value(model, atoms, steps_left):
    """Optimal value of the atom statistic ``[(x, q, weight)]`` by exhaustive search.

    Each step multiplies by the fitted indicator, branches over the next mode
    and the observation cell, and maximizes over actions; the terminal value
    is the fitted indicator's mass.
    """
    ind = model.indicator.mixture
    if steps_left == 0:
        return sum(w * _at(ind, x, q) for x, q, w in atoms)
    best = -np.inf
    for u in range(model.n_actions):
        total = 0.0
        for yx in range(model.N_yx):
            nxt = []
            for x, q, w in atoms:
                g = w * _at(ind, x, q)
                for qn in range(model.n_modes):
                    p = float(model.Tq[u, q, qn])
                    if p == 0.0:
                        continue
                    xn = float(model.A[0, 0]) * x + float(model.f[qn, u, 0])
                    nxt.append((xn, qn, g * p * _likelihood(model, yx, u, xn)))
            total += enumerate_value(model, nxt, steps_left - 1)
        best = max(best, total)
    return best


def closed_form_l1_two_gaussians(d: float) -> float:
    """``|| N(0, 1) - N(d, 1) ||_1`` via the crossing point ``d / 2``."""
    return 2.0 * (1.0 - 2.0 * norm.cdf(-d / 2.0))
