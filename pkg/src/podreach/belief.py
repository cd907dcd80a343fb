"""Unnormalized sufficient statistic and its Gaussian-sum update."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gmix import HybridMixture, interval_mass, multiply_arrays, multiply_collapse, reduce_arrays
from .hsmodel import HybridModel

__all__ = ["SufficientStatistic", "init", "update", "safety_mass", "is_dead",
           "dump_csv", "load_csv", "gate", "PRUNE_REL", "DEAD_THRESHOLD"]

PRUNE_REL = 1e-12
DEAD_THRESHOLD = 1e-6


@dataclass(frozen=True)
class SufficientStatistic:
    """Unnormalized joint of the current hybrid state and past safety.

    Integrating ``mixture`` over a set gives the probability that the state
    lies in the set and every earlier state was safe (jointly with the
    observations seen so far, up to a constant per observation sequence).
    """

    mixture: HybridMixture
    time_index: int = 0
    dead: bool = False

    def __post_init__(self):
        # single components may be negative (signed transition fits); mode masses may not
        for q in range(self.mixture.n_modes):
            w = self.mixture.mode(q)[0]
            if w.sum() < -1e-12 * max(1.0, np.abs(w).sum()):
                raise ValueError(f"sufficient statistic has negative mass in mode {q}")

    @property
    def total_mass(self) -> float:
        return self.mixture.total_weight()

    @property
    def n_modes(self) -> int:
        return self.mixture.n_modes


def init(rho: HybridMixture, q0: int | None = None, n_modes: int | None = None,
         mode_prior=None) -> SufficientStatistic:
    """Initial statistic from a normalized initial distribution.

    Parameters
    ----------
    rho : HybridMixture
        Either a 1-mode density over ``x`` or a full hybrid density.
    q0 : int, optional
        Known initial mode; all mass goes there.
    n_modes : int, optional
        Number of modes of the model when ``rho`` is a 1-mode density.
    mode_prior : array_like, optional
        Mode weights used when ``q0`` is not known (uniform by default).
    """
    if abs(rho.total_weight() - 1.0) > 1e-6:
        raise ValueError(f"rho must be normalized (total mass {rho.total_weight():.9g})")
    for q in range(rho.n_modes):
        if np.any(rho.mode(q)[0] < 0):
            raise ValueError("rho must have nonnegative weights")
    n_modes = rho.n_modes if n_modes is None else int(n_modes)
    if rho.n_modes == n_modes and rho.n_modes > 1:
        if q0 is not None:
            raise ValueError("q0 only applies to a 1-mode rho")
        return SufficientStatistic(rho, 0)
    if rho.n_modes != 1:
        raise ValueError("rho must have 1 mode or n_modes modes")
    w, m, S = rho.mode(0)
    empty = (np.zeros(0), np.zeros((0, rho.dim)), np.zeros((0, rho.dim, rho.dim)))
    if q0 is not None:
        if not 0 <= q0 < n_modes:
            raise ValueError(f"q0={q0} out of range")
        modes = [empty] * n_modes
        modes[q0] = (w, m, S)
    else:
        prior = np.full(n_modes, 1.0 / n_modes) if mode_prior is None else np.asarray(mode_prior, float)
        if prior.shape != (n_modes,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("mode_prior must be a probability vector over the modes")
        modes = [(w * prior[q], m, S) for q in range(n_modes)]
    return SufficientStatistic(HybridMixture(n_modes, rho.dim, modes, validate=False), 0)


def _prune(w, m, S, cutoff):
    # by magnitude: x-dependent transition fits may carry negative weights
    keep = np.abs(w) > cutoff
    if keep.all():
        return w, m, S
    return w[keep], m[keep], S[keep]


def gate(ind, comps, reduce_to: int, cutoff: float = 0.0):
    """Indicator times a nonnegative component set, capped at ``reduce_to`` components.

    Each component's products with the indicator collapse to one Gaussian
    when that is accurate (interior of the safe set); the rest are merged
    greedily.
    """
    iw = ind[0]
    if np.all(iw >= 0) and np.all(comps[0] >= 0):
        w, m, S = multiply_collapse(*ind, *comps)
    else:
        w, m, S = multiply_arrays(*ind, *comps)
    w, m, S = _prune(w, m, S, cutoff)
    return reduce_arrays(w, m, S, reduce_to)[:3]


def update(model: HybridModel, sigma: SufficientStatistic, y, u: int, reduce_to: int | None = 20,
           measure_change: bool = False, prune: bool = True) -> SufficientStatistic:
    """Apply the observation/action update to ``sigma``.

    Multiplies by the fitted safe-set indicator, moves mass between modes,
    propagates through the linear-Gaussian dynamics and multiplies by the
    likelihood of the observation cell.

    Parameters
    ----------
    y : int or (int, int)
        Observation grid index, or ``(grid index, mode symbol)``.
    reduce_to : int or None
        Components per mode after the update; ``None`` keeps the exact
        closed form (no reduction, no intermediate merging).
    measure_change : bool
        Multiply by the constant ``N_yx * N_yq`` of the reference-measure
        formulation. It scales every statistic by the same factor and leaves
        policies unchanged; off by default so that total mass is a
        probability.
    prune : bool
        Drop components whose weight magnitude is below ``1e-12`` times the total.
    """
    yx, yq = (y, 0) if np.ndim(y) == 0 else (int(y[0]), int(y[1]))
    if not 0 <= yx < model.N_yx:
        raise IndexError(f"observation index {yx} outside the grid of {model.N_yx} values")
    if not 0 <= yq < model.N_yq:
        raise IndexError(f"mode observation {yq} outside 0..{model.N_yq - 1}")
    if not 0 <= u < model.n_actions:
        raise IndexError(f"action {u} out of range")
    mix = sigma.mixture
    n, nm = model.n, model.n_modes
    t_next = sigma.time_index + 1
    if sigma.dead or mix.is_zero():
        return SufficientStatistic(HybridMixture.empty(nm, n), t_next, dead=True)
    total = mix.total_weight()
    cutoff = PRUNE_REL * total if prune else -1.0
    ind = model.indicator.mixture
    # indicator times sigma, per source mode
    gated = []
    for q in range(nm):
        if reduce_to is None:
            wq, mq, Sq = multiply_arrays(*ind.mode(q), *mix.mode(q))
            wq, mq, Sq = _prune(wq, mq, Sq, cutoff)
        else:
            wq, mq, Sq = gate(ind.mode(q), mix.mode(q), reduce_to, cutoff)
        gated.append((wq, mq, Sq))
    ow, om, oS = model.observation(u).arrays(yx)
    scale = float(model.N_yx * model.N_yq) if measure_change else 1.0
    modes = []
    for qn in range(nm):
        qfac = 1.0 if model.perfect_mode_observation else float(model.obs_q[u, qn, yq])
        parts = []
        if qfac != 0.0:
            for q in range(nm):
                wq, mq, Sq = gated[q]
                if wq.size == 0:
                    continue
                fit = model.tq_fits.get((u, q, qn))
                if fit is None:
                    p = float(model.Tq[u, q, qn])
                    if p == 0.0:
                        continue
                    comp = (wq * p, mq, Sq)
                else:
                    comp = multiply_arrays(*fit.mixture.mode(0), wq, mq, Sq)
                parts.append(model.push(*comp, qn, u))
        if not parts:
            modes.append((np.zeros(0), np.zeros((0, n)), np.zeros((0, n, n))))
            continue
        pw = np.concatenate([p[0] for p in parts])
        pm = np.concatenate([p[1] for p in parts])
        pS = np.concatenate([p[2] for p in parts])
        w2, m2, S2 = multiply_arrays(ow, om, oS, pw, pm, pS)
        w2 = w2 * (qfac * scale)
        if prune:
            w2, m2, S2 = _prune(w2, m2, S2, PRUNE_REL * np.abs(w2).sum())
        if reduce_to is not None:
            w2, m2, S2, _ = reduce_arrays(w2, m2, S2, reduce_to)
        modes.append((w2, m2, S2))
    out = HybridMixture(nm, n, modes, validate=False)
    return SufficientStatistic(out, t_next, dead=out.is_zero())


def safety_mass(model: HybridModel, sigma: SufficientStatistic) -> float:
    """Mass of ``sigma`` inside the safe set, by exact Gaussian CDFs."""
    return interval_mass(sigma.mixture, model.safe_lower, model.safe_upper, model.safe_modes)


def is_dead(sigma: SufficientStatistic, threshold: float = DEAD_THRESHOLD) -> bool:
    return sigma.dead or sigma.total_mass < threshold


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------

def dump_csv(sigma: SufficientStatistic, path=None) -> str:
    """Write one row per component: mode, weight, means, covariance entries (row-major)."""
    n = sigma.mixture.dim
    header = (["mode", "weight"] + [f"mean_{i}" for i in range(n)]
              + [f"cov_{i}_{j}" for i in range(n) for j in range(n)])
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\r\n")
    wr.writerow(header)
    for q in range(sigma.mixture.n_modes):
        w, m, S = sigma.mixture.mode(q)
        for k in range(w.size):
            wr.writerow([q, repr(float(w[k]))] + [repr(float(v)) for v in m[k]]
                        + [repr(float(v)) for v in S[k].reshape(-1)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def load_csv(source, n_modes: int, time_index: int = 0) -> SufficientStatistic:
    """Inverse of :func:`dump_csv`; ``source`` is a path or the CSV text."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    n = sum(1 for h in header if h.startswith("mean_"))
    comps = {q: ([], [], []) for q in range(n_modes)}
    for r in body:
        q = int(r[0])
        vals = [float(v) for v in r[1:]]
        comps[q][0].append(vals[0])
        comps[q][1].append(vals[1:1 + n])
        comps[q][2].append(np.reshape(vals[1 + n:], (n, n)))
    modes = [(np.array(c[0]), np.array(c[1]).reshape(-1, n), np.array(c[2]).reshape(-1, n, n))
             for c in (comps[q] for q in range(n_modes))]
    return SufficientStatistic(HybridMixture(n_modes, n, modes), time_index)
