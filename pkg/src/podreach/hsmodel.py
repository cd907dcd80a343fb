"""Partially observable hybrid models: dynamics, observations, safe set and Gaussian-sum fits."""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize, nnls
from scipy.special import ndtr
from scipy.stats import norm

from .gmix import HybridMixture, pull_arrays, push_arrays

__all__ = [
    "ModelError", "FitError", "DiscretizedObservation", "IndicatorFit", "GaussianSumFit",
    "HybridModel", "build_thermostat", "fit_indicator", "fit_gaussian_sum",
    "transition_mixture", "load_model", "save_model", "model_from_dict", "model_to_dict",
    "THERMOSTAT_B", "THERMOSTAT_C", "THERMOSTAT_XA",
]

THERMOSTAT_B = 0.0167
THERMOSTAT_C = 0.8
THERMOSTAT_XA = 6.0

MODEL_SCHEMA_VERSION = 1


class ModelError(ValueError):
    """Invalid model definition; ``path`` locates the first offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class FitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# observation channel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscretizedObservation:
    """Scalar observation ``y = x + w`` snapped to a regular grid.

    The probability of the cell around grid value ``y`` given ``x`` is
    approximated by ``H`` sub-Gaussians in ``x`` with weights ``sub_delta``
    placed at the sub-cell midpoints.

    Attributes
    ----------
    grid : ndarray
        Observation values, increasing with spacing ``delta``.
    tol_lo, tol_hi : float
        Extension of the grid below / above the safe interval.
    """

    grid: np.ndarray
    delta: float
    sub_delta: float
    noise_var: float
    tol_lo: float = 0.0
    tol_hi: float = 0.0

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float).reshape(-1)
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)
        if g.size < 1:
            raise ModelError("obs_x.grid", "empty grid")
        if self.delta <= 0 or self.sub_delta <= 0:
            raise ModelError("obs_x.delta", "spacings must be positive")
        if self.noise_var <= 0:
            raise ModelError("obs_x.noise_var", "noise variance must be positive")
        if g.size > 1 and not np.allclose(np.diff(g), self.delta, rtol=0, atol=1e-9 * max(1.0, abs(g).max())):
            raise ModelError("obs_x.grid", "grid spacing must equal delta")
        H = self.n_sub
        w = np.full(H, self.n_sub_weight)
        offs = -0.5 * self.delta + (np.arange(H) + 0.5) * (self.delta / H)
        means = g[:, None] + offs[None, :]
        cov = np.full((H, 1, 1), self.noise_var)
        for a in (w, means, cov):
            a.setflags(write=False)
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_means", means)
        object.__setattr__(self, "_cov", cov)

    @classmethod
    def build(cls, lo: float, hi: float, delta: float, sub_delta: float, noise_std: float,
              tol_lo: float = 0.0, tol_hi: float = 0.0) -> "DiscretizedObservation":
        """Grid ``lo, lo + delta, ..., hi`` (``hi - lo`` rounded to a multiple of ``delta``)."""
        if delta <= 0:
            raise ModelError("obs_x.delta", "delta must be positive")
        count = int(round((hi - lo) / delta)) + 1
        grid = lo + delta * np.arange(count)
        return cls(grid, float(delta), float(sub_delta), float(noise_std) ** 2, float(tol_lo), float(tol_hi))

    @property
    def n_values(self) -> int:
        return self.grid.size

    @property
    def n_sub(self) -> int:
        """Number ``H`` of sub-Gaussians per cell."""
        return max(1, int(round(self.delta / self.sub_delta)))

    @property
    def n_sub_weight(self) -> float:
        return self.delta / self.n_sub

    def arrays(self, i: int):
        """``(w, m, S)`` of the likelihood of grid value ``i`` as a function of ``x``."""
        return self._w, self._means[i][:, None], self._cov

    def likelihood(self, i: int) -> HybridMixture:
        w, m, S = self.arrays(i)
        return HybridMixture.single_mode(w, m, S, validate=False)

    def cell_probability(self, i, x):
        """Exact ``P(y in cell i | x)`` for the continuous channel."""
        x = np.asarray(x, dtype=float)
        y = self.grid[i]
        sd = math.sqrt(self.noise_var)
        return ndtr((y + 0.5 * self.delta - x) / sd) - ndtr((y - 0.5 * self.delta - x) / sd)

    def snap(self, y) -> np.ndarray:
        """Index of the nearest grid value (clipped to the ends)."""
        idx = np.rint((np.asarray(y, dtype=float) - self.grid[0]) / self.delta)
        return np.clip(idx, 0, self.grid.size - 1).astype(np.int64)

    def to_dict(self) -> dict:
        return {"lo": float(self.grid[0]), "hi": float(self.grid[-1]), "delta": self.delta,
                "sub_delta": self.sub_delta, "noise_std": math.sqrt(self.noise_var),
                "tol_lo": self.tol_lo, "tol_hi": self.tol_hi}


# ---------------------------------------------------------------------------
# Gaussian-sum function fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IndicatorFit:
    """Gaussian-sum approximation of the safe-set indicator.

    ``fit_residual`` is the sup-norm of ``1 - fit`` over the safe box shrunk
    by 5% per side, on a 1000-point (per axis) reporting grid.
    """

    mixture: HybridMixture
    fit_residual: float
    width_ratio: float = 0.0
    n_components: int = 0


_RATIOS = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8)


@functools.lru_cache(maxsize=64)
def _fit_interval(lo: float, hi: float, n: int):
    """1-D fit of ``1_[lo, hi]``: means, common sd and weights, plus the interior minimum.

    Means sit at the centres of ``n`` equal sub-intervals and the sd is a
    multiple of their width. Weights solve least squares subject to
    ``0 <= w`` and ``fit <= 1`` on the fit grid, so the fit never overshoots
    there. Among a few width ratios the one with the largest interior minimum
    wins.
    """
    width = hi - lo
    sp = width / n
    mu = lo + (np.arange(n) + 0.5) * sp
    pad = 3.0 * max(sp, 0.1 * width)
    xs = np.linspace(lo - pad, hi + pad, 1501)
    target = ((xs >= lo) & (xs <= hi)).astype(float)
    inner = np.linspace(lo + 0.05 * width, hi - 0.05 * width, 1000)
    best = None
    for ratio in _RATIOS:
        s = ratio * sp
        B = norm.pdf(xs[:, None], mu[None, :], s)
        w0, _ = nnls(B, target)
        peak = (B @ w0).max()
        if peak > 1.0:
            w0 = w0 / peak
        res = minimize(
            lambda w: 0.5 * np.sum((B @ w - target) ** 2), w0,
            jac=lambda w: B.T @ (B @ w - target), method="SLSQP",
            bounds=[(0.0, None)] * n,
            constraints=[{"type": "ineq", "fun": lambda w: 1.0 - B @ w, "jac": lambda w: -B}],
            options={"maxiter": 300, "ftol": 1e-12})
        w = np.clip(res.x, 0.0, None)
        peak = (B @ w).max()
        if peak > 1.0:
            w = w / peak
        fin = norm.pdf(inner[:, None], mu[None, :], s) @ w
        score = fin.min()
        if best is None or score > best[0] + 1e-12:
            best = (score, ratio, s, w)
    score, ratio, s, w = best
    return mu, s, w, ratio


def fit_indicator(lower, upper, modes: Sequence[int], n_modes: int, n_components: int) -> IndicatorFit:
    """Fit ``1_K`` for the box ``[lower, upper]`` and mode set ``modes``.

    In more than one dimension the fit is the tensor product of per-axis fits
    (``n_components ** n`` Gaussians).

    Raises
    ------
    FitError
        If the interior sup-norm residual exceeds 0.15.
    """
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if np.any(upper <= lower):
        raise ValueError("empty safe box")
    n = lower.size
    axes = [_fit_interval(float(lo), float(hi), int(n_components)) for lo, hi in zip(lower, upper)]
    grids = np.meshgrid(*[np.arange(n_components)] * n, indexing="ij")
    idx = np.stack([g.reshape(-1) for g in grids], axis=1)
    w = np.ones(idx.shape[0])
    m = np.empty((idx.shape[0], n))
    S = np.zeros((idx.shape[0], n, n))
    for d, (mu, s, wd, _) in enumerate(axes):
        w = w * wd[idx[:, d]]
        m[:, d] = mu[idx[:, d]]
        S[:, d, d] = s * s
    keep = w > 0
    w, m, S = w[keep], m[keep], S[keep]
    empty = (np.zeros(0), np.zeros((0, n)), np.zeros((0, n, n)))
    modes = set(int(q) for q in modes)
    mix = HybridMixture(n_modes, n, [(w, m, S) if q in modes else empty for q in range(n_modes)])
    # per-axis residual; the product of per-axis fits is no worse than their sum of errors
    resid = 0.0
    for lo, hi, (mu, s, wd, _) in zip(lower, upper, axes):
        xs = np.linspace(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), 1000)
        resid += float(np.max(np.abs(1.0 - norm.pdf(xs[:, None], mu[None, :], s) @ wd)))
    if resid > 0.15:
        raise FitError(f"indicator fit residual {resid:.3f} exceeds 0.15 on the interior; "
                       f"use more components (got {n_components})")
    return IndicatorFit(mix, resid, axes[0][3], int(n_components))


@dataclass(frozen=True)
class GaussianSumFit:
    """1-mode mixture approximating a scalar function of ``x`` on ``[lo, hi]``."""

    mixture: HybridMixture
    lo: float
    hi: float
    sup_error: float


def fit_gaussian_sum(func: Callable, lo: float, hi: float, n_components: int = 5,
                     n_grid: int = 801) -> GaussianSumFit:
    """Fit ``func`` on ``[lo, hi]`` (1-D) by ``n_components`` free Gaussians.

    Weights, means and log-sds are refined by nonlinear least squares from an
    equally spaced start.
    """
    xs = np.linspace(lo, hi, n_grid)
    target = np.asarray(func(xs), dtype=float)
    J = int(n_components)
    width = hi - lo
    mu0 = lo - 0.25 * width + (np.arange(J) + 0.5) * 1.5 * width / J
    s0 = np.full(J, 1.5 * width / J)
    B = norm.pdf(xs[:, None], mu0[None, :], s0[None, :])
    w0 = np.linalg.lstsq(B, target, rcond=None)[0]

    def resid(p):
        w, mu, ls = p[:J], p[J:2 * J], p[2 * J:]
        return norm.pdf(xs[:, None], mu[None, :], np.exp(ls)[None, :]) @ w - target

    sol = least_squares(resid, np.concatenate([w0, mu0, np.log(s0)]), method="lm",
                        xtol=1e-12, ftol=1e-12, max_nfev=20000)
    w, mu, sd = sol.x[:J], sol.x[J:2 * J], np.exp(sol.x[2 * J:])
    err = float(np.max(np.abs(resid(sol.x))))
    mix = HybridMixture.single_mode(w, mu[:, None], (sd ** 2)[:, None, None])
    return GaussianSumFit(mix, float(lo), float(hi), err)


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HybridModel:
    """A partially observable hybrid system with linear-Gaussian continuous dynamics.

    ``x' = A x + f[q', u] + N(0, W[q', u])`` after ``q' ~ Tq[u, q, :]``. The
    continuous state is observed through ``obs_x`` and the mode through
    ``obs_q[u][q, :]`` unless ``perfect_mode_observation`` is set.

    Attributes
    ----------
    Tq : ndarray, shape (n_actions, n_modes, n_modes)
        ``Tq[u, q, q']`` = probability of the next mode.
    tq_fits : dict, optional
        ``{(u, q, q'): GaussianSumFit}`` overriding the constant entry with an
        x-dependent Gaussian sum.
    """

    A: np.ndarray
    f: np.ndarray
    W: np.ndarray
    Tq: np.ndarray
    obs_x: DiscretizedObservation | tuple
    safe_lower: np.ndarray
    safe_upper: np.ndarray
    safe_modes: tuple
    indicator: IndicatorFit
    obs_q: np.ndarray | None = None
    perfect_mode_observation: bool = True
    tq_fits: dict = field(default_factory=dict)
    actions: tuple = ()
    name: str = "model"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError("A", "must be square")
        if abs(np.linalg.det(A)) <= 1e-12:
            raise ModelError("A", "must be invertible")
        Tq = np.asarray(self.Tq, dtype=float)
        if Tq.ndim != 3 or Tq.shape[1] != Tq.shape[2]:
            raise ModelError("Tq", "expected shape (n_actions, n_modes, n_modes)")
        n_act, n_modes = Tq.shape[0], Tq.shape[1]
        for u in range(n_act):
            for q in range(n_modes):
                row = Tq[u, q]
                if np.any(row < -1e-12) or np.any(row > 1 + 1e-12):
                    raise ModelError(f"Tq[{u}][{q}]", "entries must lie in [0, 1]")
                if abs(row.sum() - 1.0) > 1e-9:
                    raise ModelError(f"Tq[{u}][{q}]", f"next-mode probabilities sum to {row.sum():.12g}")
        f = np.asarray(self.f, dtype=float).reshape(n_modes, n_act, n)
        W = np.asarray(self.W, dtype=float).reshape(n_modes, n_act, n, n)
        for qn in range(n_modes):
            for u in range(n_act):
                Wk = W[qn, u]
                if not np.allclose(Wk, Wk.T) or np.linalg.eigvalsh(0.5 * (Wk + Wk.T)).min() <= 1e-12:
                    raise ModelError(f"W[{qn}][{u}]", "must be symmetric positive definite")
        obs = self.obs_x if isinstance(self.obs_x, tuple) else (self.obs_x,)
        if len(obs) not in (1, n_act):
            raise ModelError("obs_x", "give one observation channel or one per action")
        if n != 1:
            raise ModelError("obs_x", "the discretized observation channel is scalar; n must be 1")
        for k, o in enumerate(obs):
            if o.n_values != obs[0].n_values:
                raise ModelError(f"obs_x[{k}]", "all channels must share the grid size")
        if self.perfect_mode_observation:
            obs_q = np.ones((n_act, n_modes, 1))
        else:
            if self.obs_q is None:
                raise ModelError("obs_q", "required unless perfect_mode_observation is set")
            obs_q = np.asarray(self.obs_q, dtype=float)
            if obs_q.ndim != 3 or obs_q.shape[:2] != (n_act, n_modes):
                raise ModelError("obs_q", "expected shape (n_actions, n_modes, N_yq)")
            for u in range(n_act):
                for q in range(n_modes):
                    row = obs_q[u, q]
                    if np.any(row < -1e-12) or abs(row.sum() - 1.0) > 1e-9:
                        raise ModelError(f"obs_q[{u}][{q}]", "rows must be probability vectors")
        lo = np.atleast_1d(np.asarray(self.safe_lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.safe_upper, dtype=float))
        if lo.shape != (n,) or hi.shape != (n,) or np.any(hi <= lo):
            raise ModelError("safe_set", "box bounds must have n entries with lower < upper")
        modes = tuple(sorted(set(int(q) for q in self.safe_modes)))
        if any(q < 0 or q >= n_modes for q in modes):
            raise ModelError("safe_set.modes", "mode index out of range")
        if self.indicator.mixture.n_modes != n_modes or self.indicator.mixture.dim != n:
            raise ModelError("indicator", "fit does not match the model dimensions")
        for key in self.tq_fits:
            u, q, qn = key
            if not (0 <= u < n_act and 0 <= q < n_modes and 0 <= qn < n_modes):
                raise ModelError(f"tq_fits[{key}]", "index out of range")
        actions = tuple(self.actions) if self.actions else tuple(range(n_act))
        if len(actions) != n_act:
            raise ModelError("actions", "one label per action required")
        for a in (A, Tq, f, W, obs_q, lo, hi):
            a.setflags(write=False)
        for k, v in (("A", A), ("Tq", Tq), ("f", f), ("W", W), ("obs_q", obs_q),
                     ("safe_lower", lo), ("safe_upper", hi), ("safe_modes", modes),
                     ("obs_x", obs), ("actions", actions)):
            object.__setattr__(self, k, v)

    # -- sizes -------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_modes(self) -> int:
        return self.Tq.shape[1]

    @property
    def n_actions(self) -> int:
        return self.Tq.shape[0]

    @property
    def N_yx(self) -> int:
        return self.obs_x[0].n_values

    @property
    def N_yq(self) -> int:
        return self.obs_q.shape[2]

    def observation(self, u: int) -> DiscretizedObservation:
        return self.obs_x[u] if len(self.obs_x) > 1 else self.obs_x[0]

    def kernel(self, q_next: int, u: int):
        """``(A, f, W)`` of the continuous transition into mode ``q_next`` under ``u``."""
        return self.A, self.f[q_next, u], self.W[q_next, u]

    def kernel_key(self, q_next: int, u: int) -> bytes:
        """Identifies kernels (and observation channels) that coincide across actions."""
        channel = 0 if len(self.obs_x) == 1 else u
        return (self.f[q_next, u].tobytes() + self.W[q_next, u].tobytes()
                + channel.to_bytes(4, "little"))

    def push(self, w, m, S, q_next: int, u: int):
        return push_arrays(w, m, S, *self.kernel(q_next, u))

    def pull(self, w, m, S, q_next: int, u: int):
        return pull_arrays(w, m, S, *self.kernel(q_next, u))

    def in_safe_set(self, x, q) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.n)
        q = np.asarray(q).reshape(-1)
        inside = np.all((x >= self.safe_lower) & (x <= self.safe_upper), axis=1)
        return inside & np.isin(q, self.safe_modes)


def transition_mixture(model: HybridModel, q: int, u: int, q_next: int):
    """Mode-transition weight and continuous kernel for ``(q, u) -> q_next``.

    Returns
    -------
    weight : float or HybridMixture
        The constant table entry, or the 1-mode Gaussian sum in ``x`` when an
        x-dependent fit is registered.
    kernel : tuple
        ``(A, f, W)``.
    """
    fit = model.tq_fits.get((u, q, q_next))
    weight = fit.mixture if fit is not None else float(model.Tq[u, q, q_next])
    return weight, model.kernel(q_next, u)


# ---------------------------------------------------------------------------
# thermostat benchmark
# ---------------------------------------------------------------------------

def _grid_extension(A: float, offsets, lo: float, hi: float, sd: float, delta: float, tail: float):
    """Grid extensions so that one-step observations from ``K`` leave the grid with mass < ``tail``."""
    z = norm.isf(tail)
    reach_lo = min(A * lo + c for c in offsets) - z * sd
    reach_hi = max(A * hi + c for c in offsets) + z * sd
    tol_lo = max(0.0, math.ceil((lo - reach_lo) / delta - 1e-9) * delta)
    tol_hi = max(0.0, math.ceil((reach_hi - hi) / delta - 1e-9) * delta)
    return tol_lo, tol_hi


def build_thermostat(v_std: float = 0.1, w_std: float = 0.25, delta: float = 0.25,
                     sub_delta: float | None = None, n_indicator: int = 20,
                     actuation_prob: float = 0.9, tail: float = 1e-6) -> HybridModel:
    """One room, one heater.

    ``x' = (1 - b) x + c q' + b x_a + v`` with ``q' = u`` with probability
    ``actuation_prob`` (otherwise the other mode). The mode is observed
    exactly; the temperature through ``y = x + w`` on a grid of spacing
    ``delta``. Safe set ``[17.5, 22]`` in both modes.

    Parameters
    ----------
    sub_delta : float, optional
        Spacing of the sub-Gaussians inside one observation cell; defaults
        to ``delta / 3``.
    tail : float
        Allowed probability that a one-step observation from the safe set
        falls outside the observation grid.
    """
    for name, val in (("v_std", v_std), ("w_std", w_std), ("delta", delta), ("n_indicator", n_indicator)):
        if not val > 0:
            raise ModelError(name, "must be positive")
    if not 0.0 <= actuation_prob <= 1.0:
        raise ModelError("actuation_prob", "must lie in [0, 1]")
    sub_delta = delta / 3.0 if sub_delta is None else sub_delta
    if not sub_delta > 0:
        raise ModelError("sub_delta", "must be positive")
    b, c, xa = THERMOSTAT_B, THERMOSTAT_C, THERMOSTAT_XA
    A = 1.0 - b
    lo, hi = 17.5, 22.0
    offsets = [c * qn + b * xa for qn in (0, 1)]
    tol_lo, tol_hi = _grid_extension(A, offsets, lo, hi, math.hypot(v_std, w_std), delta, tail)
    obs = DiscretizedObservation.build(lo - tol_lo, hi + tol_hi, delta, sub_delta, w_std, tol_lo, tol_hi)
    if obs.n_values < 3:
        raise ModelError("delta", f"observation grid has {obs.n_values} values; at least 3 needed")
    p = float(actuation_prob)
    Tq = np.empty((2, 2, 2))
    for u in (0, 1):
        Tq[u, :, u] = p
        Tq[u, :, 1 - u] = 1.0 - p
    f = np.array([[[offsets[qn]] for _ in (0, 1)] for qn in (0, 1)])
    W = np.full((2, 2, 1, 1), v_std ** 2)
    ind = fit_indicator([lo], [hi], (0, 1), 2, n_indicator)
    meta = {"builtin": "thermostat", "v_std": v_std, "w_std": w_std, "delta": delta,
            "sub_delta": sub_delta, "n_indicator": n_indicator, "actuation_prob": p, "tail": tail}
    return HybridModel(A=np.array([[A]]), f=f, W=W, Tq=Tq, obs_x=obs, safe_lower=np.array([lo]),
                       safe_upper=np.array([hi]), safe_modes=(0, 1), indicator=ind,
                       perfect_mode_observation=True, name="thermostat", meta=meta)


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------

_MODEL_KEYS = {"schema_version", "name", "A", "f", "W", "Tq", "obs_x", "obs_q",
               "perfect_mode_observation", "safe_set", "n_indicator", "actions"}


def model_to_dict(model: HybridModel) -> dict:
    """JSON-ready description (matrices row-major, state in the model's units)."""
    obs = [o.to_dict() for o in model.obs_x]
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "name": model.name,
        "A": model.A.tolist(),
        "f": model.f.tolist(),
        "W": model.W.tolist(),
        "Tq": model.Tq.tolist(),
        "obs_x": obs[0] if len(obs) == 1 else obs,
        "obs_q": None if model.perfect_mode_observation else model.obs_q.tolist(),
        "perfect_mode_observation": bool(model.perfect_mode_observation),
        "safe_set": {"lower": model.safe_lower.tolist(), "upper": model.safe_upper.tolist(),
                     "modes": list(model.safe_modes)},
        "n_indicator": model.indicator.n_components,
        "actions": list(model.actions),
    }


def _req(d: dict, key: str, path: str):
    if key not in d:
        raise ModelError(f"{path}.{key}", "missing")
    return d[key]


def _array(value, path: str, ndim: int | None = None):
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ModelError(path, "not a numeric array") from None
    if ndim is not None and a.ndim != ndim:
        raise ModelError(path, f"expected {ndim} dimensions, got {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ModelError(path, "non-finite entry")
    return a


def _obs_from_dict(d, path):
    if not isinstance(d, dict):
        raise ModelError(path, "expected an object")
    extra = set(d) - {"lo", "hi", "delta", "sub_delta", "noise_std", "tol_lo", "tol_hi"}
    if extra:
        raise ModelError(f"{path}.{sorted(extra)[0]}", "unknown key")
    vals = {k: float(_req(d, k, path)) for k in ("lo", "hi", "delta", "sub_delta", "noise_std")}
    for k in ("delta", "sub_delta", "noise_std"):
        if vals[k] <= 0:
            raise ModelError(f"{path}.{k}", "must be positive")
    if vals["hi"] < vals["lo"]:
        raise ModelError(f"{path}.hi", "must be >= lo")
    o = DiscretizedObservation.build(vals["lo"], vals["hi"], vals["delta"], vals["sub_delta"],
                                     vals["noise_std"], float(d.get("tol_lo", 0.0)), float(d.get("tol_hi", 0.0)))
    if o.n_values < 3:
        raise ModelError(f"{path}.delta", "observation grid needs at least 3 values")
    return o


def model_from_dict(d: dict) -> HybridModel:
    """Validate and build a model; the first violation is reported with its path."""
    if not isinstance(d, dict):
        raise ModelError("$", "expected a JSON object")
    extra = set(d) - _MODEL_KEYS
    if extra:
        raise ModelError(f"$.{sorted(extra)[0]}", "unknown key")
    ver = _req(d, "schema_version", "$")
    if ver != MODEL_SCHEMA_VERSION:
        raise ModelError("$.schema_version", f"unsupported version {ver!r}")
    A = _array(_req(d, "A", "$"), "$.A", 2)
    n = A.shape[0]
    Tq = _array(_req(d, "Tq", "$"), "$.Tq", 3)
    n_act, n_modes = Tq.shape[0], Tq.shape[1]
    f = _array(_req(d, "f", "$"), "$.f", 3)
    if f.shape != (n_modes, n_act, n):
        raise ModelError("$.f", f"expected shape ({n_modes}, {n_act}, {n}) indexed [q'][u]")
    W = _array(_req(d, "W", "$"), "$.W", 4)
    if W.shape != (n_modes, n_act, n, n):
        raise ModelError("$.W", f"expected shape ({n_modes}, {n_act}, {n}, {n}) indexed [q'][u]")
    obs_raw = _req(d, "obs_x", "$")
    if isinstance(obs_raw, list):
        obs = tuple(_obs_from_dict(o, f"$.obs_x[{k}]") for k, o in enumerate(obs_raw))
    else:
        obs = _obs_from_dict(obs_raw, "$.obs_x")
    perfect = bool(d.get("perfect_mode_observation", True))
    obs_q = d.get("obs_q")
    if not perfect:
        if obs_q is None:
            raise ModelError("$.obs_q", "missing (required without perfect mode observation)")
        obs_q = _array(obs_q, "$.obs_q", 3)
    safe = _req(d, "safe_set", "$")
    if not isinstance(safe, dict):
        raise ModelError("$.safe_set", "expected an object")
    lo = _array(_req(safe, "lower", "$.safe_set"), "$.safe_set.lower", 1)
    hi = _array(_req(safe, "upper", "$.safe_set"), "$.safe_set.upper", 1)
    modes = _req(safe, "modes", "$.safe_set")
    n_ind = int(d.get("n_indicator", 20))
    if n_ind < 1:
        raise ModelError("$.n_indicator", "must be >= 1")
    if lo.shape != (n,) or hi.shape != (n,) or np.any(hi <= lo):
        raise ModelError("$.safe_set", "box bounds must have n entries with lower < upper")
    try:
        ind = fit_indicator(lo, hi, modes, n_modes, n_ind)
    except FitError as e:
        raise ModelError("$.n_indicator", str(e)) from None
    try:
        return HybridModel(A=A, f=f, W=W, Tq=Tq, obs_x=obs, obs_q=obs_q, perfect_mode_observation=perfect,
                           safe_lower=lo, safe_upper=hi, safe_modes=tuple(modes), indicator=ind,
                           actions=tuple(d.get("actions") or ()), name=str(d.get("name", "model")))
    except ModelError as e:
        raise ModelError("$." + e.path, str(e).split(": ", 1)[1]) from None


def load_model(path) -> HybridModel:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelError("$", f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    return model_from_dict(d)


def save_model(model: HybridModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n", encoding="utf-8")
