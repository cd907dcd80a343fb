"""Point-based value iteration with Gaussian-mixture alpha-functions."""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import belief as _belief
from .belief import SufficientStatistic
from .gmix import (HybridMixture, inner_products, log_gauss, multiply_arrays, overlap_matrix,
                   project_weights, reduce_arrays)
from .hsmodel import HybridModel

__all__ = ["AlphaFunction", "PolicyStack", "BackupCache", "PolicyFormatError", "sample_belief_set",
           "backup_alpha_yu", "point_backup", "solve", "value", "delta_diagnostic",
           "initial_statistic", "POLICY_FORMAT", "POLICY_VERSION"]

POLICY_FORMAT = "podreach-policy"
POLICY_VERSION = 1


class PolicyFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AlphaFunction:
    """Value of one conditional plan as a function of the hybrid state.

    ``action`` is the first action of the plan (``None`` for the terminal
    safe-set indicator).
    """

    mixture: HybridMixture
    action: int | None
    time_index: int


def _empty(n):
    return np.zeros(0), np.zeros((0, n)), np.zeros((0, n, n))


def _cat(parts, n):
    parts = [p for p in parts if p[0].size]
    if not parts:
        return _empty(n)
    if len(parts) == 1:
        return parts[0]
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
            np.concatenate([p[2] for p in parts]))


def _maybe_reduce(arrs, target):
    if target is None or arrs[0].size <= target:
        return arrs
    return reduce_arrays(*arrs, target)[:3]


def _alpha_cap(w, m, S) -> float:
    """Upper estimate of ``max_x f(x)`` (dense grid in 1-D, component means otherwise)."""
    if w.size == 0:
        return 0.0
    if m.shape[1] == 1:
        sd = np.sqrt(S[:, 0, 0])
        pts = np.linspace((m[:, 0] - 4 * sd).min(), (m[:, 0] + 4 * sd).max(), 1024)[:, None]
    else:
        pts = m
    vals = np.exp(log_gauss(pts[:, None, :], m[None], S[None])) @ w
    return float(vals.max())


def _reduce_alpha(model: HybridModel, arrs, q: int, target):
    """Cap an alpha-function mode at ``target`` components.

    Alpha-functions are the fitted indicator times a smooth function, so the
    indicator's own components make a good fixed basis; weights are the
    nonnegative L2 projection. When the indicator has more components than
    ``target`` the basis comes from greedy merging instead. The result is
    scaled down if it exceeds 1 anywhere, since alpha-functions are
    probabilities.
    """
    if target is None or arrs[0].size == 0:
        return arrs
    w, m, S = arrs
    if w.size > target:
        iw, im, iS = model.indicator.mixture.mode(q)
        if 0 < iw.size <= target and np.all(w >= 0):
            bm, bS = im, iS
        else:
            _, bm, bS, _ = reduce_arrays(w, m, S, target)
        v = project_weights(bm, bS, w, m, S) if np.all(w >= 0) else reduce_arrays(w, m, S, target)[0]
        keep = v > 0
        w, m, S = v[keep], bm[keep], bS[keep]
    peak = _alpha_cap(w, m, S)
    if peak > 1.0:
        w = w / peak
    return w, m, S


def _times_transition(model: HybridModel, arrs, q: int, u: int, qn: int):
    """Multiply a component set by ``T_q(qn | x, q, u)``."""
    fit = model.tq_fits.get((u, q, qn))
    if fit is None:
        p = float(model.Tq[u, q, qn])
        if p == 0.0:
            return _empty(model.n)
        return arrs[0] * p, arrs[1], arrs[2]
    return multiply_arrays(*fit.mixture.mode(0), *arrs)


def _observations(model: HybridModel):
    return [(yx, yq) for yx in range(model.N_yx) for yq in range(model.N_yq)]


def _obs_factor(model: HybridModel, u: int, qn: int, yq: int) -> float:
    return 1.0 if model.perfect_mode_observation else float(model.obs_q[u, qn, yq])


# ---------------------------------------------------------------------------
# single backups
# ---------------------------------------------------------------------------

def backup_alpha_yu(model: HybridModel, alpha_next: AlphaFunction | HybridMixture, y, u: int,
                    reduce_to: int | None = None) -> HybridMixture:
    """One-observation, one-action backup of ``alpha_next``.

    ``x, q -> 1_K(x, q) sum_q' Q[q', y^q] int alpha(x', q') P(y^x | x') tau(x', q' | x, q, u) dx'``
    with the fitted indicator. Without reduction each mode holds
    ``D * H * J * I * N_q`` components.
    """
    mix = alpha_next.mixture if isinstance(alpha_next, AlphaFunction) else alpha_next
    yx, yq = (y, 0) if np.ndim(y) == 0 else (int(y[0]), int(y[1]))
    n, nm = model.n, model.n_modes
    ow, om, oS = model.observation(u).arrays(yx)
    pulled = []
    for qn in range(nm):
        c = _obs_factor(model, u, qn, yq)
        aw, am, aS = mix.mode(qn)
        if c == 0.0 or aw.size == 0:
            pulled.append(_empty(n))
            continue
        g = multiply_arrays(aw, am, aS, ow, om, oS)
        pulled.append(model.pull(g[0] * c, g[1], g[2], qn, u))
    ind = model.indicator.mixture
    modes = []
    for q in range(nm):
        acc = _cat([_times_transition(model, pulled[qn], q, u, qn) for qn in range(nm)], n)
        out = multiply_arrays(*acc, *ind.mode(q)) if acc[0].size else _empty(n)
        modes.append(_maybe_reduce(out, reduce_to))
    return HybridMixture(nm, n, modes, validate=False)


class BackupCache:
    """Memo of pulled-back ``alpha_i * likelihood(y)`` terms for one sweep.

    The terms depend on ``(i, y, kernel)`` only, so beliefs in the same sweep
    (and actions sharing a kernel) reuse them. A bank for one kernel is built
    on first use and is read-only afterwards; building is serialized by a lock.
    """

    def __init__(self, model: HybridModel, gamma_next: Sequence[AlphaFunction], reduce_to: int | None):
        if len(gamma_next) == 0:
            raise ValueError("gamma_next must be nonempty")
        self.model = model
        self.gamma = list(gamma_next)
        self.reduce_to = reduce_to
        self.term_target = None if reduce_to is None else max(4, reduce_to // 2)
        self._banks = {}
        self._lock = threading.Lock()

    def bank(self, qn: int, u: int):
        """Terms for next mode ``qn`` under ``u``.

        Returns ``(terms, w, m, S, idx)``: ``terms[i][yx]`` are component
        arrays; the concatenated arrays with flat index ``i * N_yx + yx`` feed
        the selection inner products.
        """
        key = self.model.kernel_key(qn, u)
        bank = self._banks.get(key)
        if bank is not None:
            return bank
        with self._lock:
            bank = self._banks.get(key)
            if bank is None:
                bank = self._build(qn, u)
                self._banks[key] = bank
        return bank

    def _build(self, qn: int, u: int):
        model, n = self.model, self.model.n
        obs = model.observation(u)
        terms = []
        for alpha in self.gamma:
            aw, am, aS = alpha.mixture.mode(qn)
            row = []
            for yx in range(model.N_yx):
                if aw.size == 0:
                    row.append(_empty(n))
                    continue
                g = multiply_arrays(aw, am, aS, *obs.arrays(yx))
                big = np.abs(g[0])
                if big.size and big.max() > 0:
                    keep = big > 1e-14 * big.max()
                    g = (g[0][keep], g[1][keep], g[2][keep])
                b = model.pull(*g, qn, u)
                row.append(_maybe_reduce(b, self.term_target))
            terms.append(row)
        flat = [terms[i][yx] for i in range(len(terms)) for yx in range(model.N_yx)]
        sizes = np.array([f[0].size for f in flat])
        w, m, S = _cat(flat, n)
        idx = np.repeat(np.arange(len(flat)), sizes)
        return terms, w, m, S, idx


def _gated(model: HybridModel, sigma: SufficientStatistic, reduce_to):
    ind = model.indicator.mixture
    out = []
    for q in range(model.n_modes):
        if reduce_to is None:
            out.append(multiply_arrays(*ind.mode(q), *sigma.mixture.mode(q)))
        else:
            out.append(_belief.gate(ind.mode(q), sigma.mixture.mode(q), reduce_to))
    return out


def _selection(cache: BackupCache, sigma: SufficientStatistic):
    """Scores ``V[u, y, i] = <alpha^i_{y,u}, sigma>`` for all actions, observations and alphas."""
    model = cache.model
    n, nm = model.n, model.n_modes
    D, Ny, Nq = len(cache.gamma), model.N_yx, model.N_yq
    gated = _gated(model, sigma, cache.reduce_to)
    V = np.zeros((model.n_actions, Ny, Nq, D))
    for u in range(model.n_actions):
        for qn in range(nm):
            chi = _cat([_times_transition(model, gated[q], q, u, qn) for q in range(nm)], n)
            chi = _maybe_reduce(chi, cache.reduce_to)
            if chi[0].size == 0:
                continue
            _, bw, bm, bS, idx = cache.bank(qn, u)
            if bw.size == 0:
                continue
            vals = bw * (overlap_matrix(bm, bS, chi[1], chi[2]) @ chi[0])
            P = np.bincount(idx, weights=vals, minlength=D * Ny).reshape(D, Ny)
            for yq in range(Nq):
                c = _obs_factor(model, u, qn, yq)
                if c != 0.0:
                    V[u, :, yq, :] += c * P.T
    return V


def point_backup(model: HybridModel, sigma: SufficientStatistic, gamma_next: Sequence[AlphaFunction],
                 reduce_to: int | None = 20, cache: BackupCache | None = None,
                 time_index: int | None = None) -> AlphaFunction:
    """Best new alpha-function at ``sigma``.

    For every action the maximizing next-step alpha is chosen per observation;
    the action whose summed candidate scores highest at ``sigma`` wins (ties
    go to the lowest action index).
    """
    if cache is None:
        cache = BackupCache(model, gamma_next, reduce_to)
    elif len(gamma_next) and cache.gamma is not gamma_next and list(cache.gamma) != list(gamma_next):
        raise ValueError("cache was built for a different gamma_next")
    n, nm = model.n, model.n_modes
    V = _selection(cache, sigma)
    best_i = V.argmax(axis=3)
    scores = V.max(axis=3).sum(axis=(1, 2))
    u = int(np.argmax(scores))
    pulled = []
    for qn in range(nm):
        terms = cache.bank(qn, u)[0]
        parts = []
        for yx in range(model.N_yx):
            for yq in range(model.N_yq):
                c = _obs_factor(model, u, qn, yq)
                if c == 0.0:
                    continue
                w, m, S = terms[best_i[u, yx, yq]][yx]
                parts.append((w * c, m, S) if c != 1.0 else (w, m, S))
        pulled.append(_maybe_reduce(_cat(parts, n), cache.reduce_to))
    ind = model.indicator.mixture
    modes = []
    for q in range(nm):
        acc = _cat([_times_transition(model, pulled[qn], q, u, qn) for qn in range(nm)], n)
        acc = _maybe_reduce(acc, cache.reduce_to)
        out = multiply_arrays(*acc, *ind.mode(q)) if acc[0].size else _empty(n)
        if cache.reduce_to is not None and out[0].size:
            big = np.abs(out[0])
            keep = big > _belief.PRUNE_REL * big.sum()
            out = (out[0][keep], out[1][keep], out[2][keep])
        modes.append(_reduce_alpha(model, out, q, cache.reduce_to))
    t = sigma.time_index if time_index is None else time_index
    return AlphaFunction(HybridMixture(nm, n, modes, validate=False), u, t)


# ---------------------------------------------------------------------------
# policy stack
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyStack:
    """Alpha-function sets ``gammas[t]`` for ``t = 0..horizon``."""

    gammas: tuple
    horizon: int
    belief_count: int
    reduce_to: int | None
    model_spec: dict = field(default_factory=dict)

    def value(self, sigma, t: int = 0, stationary: bool = False, clamp: bool = True):
        return value(self, sigma, t, stationary=stationary, clamp=clamp)

    def sizes(self) -> list[int]:
        return [len(g) for g in self.gammas]

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        def mix(m: HybridMixture):
            return [{"w": w.tolist(), "m": mu.tolist(), "S": S.tolist()} for w, mu, S in
                    (m.mode(q) for q in range(m.n_modes))]

        doc = {
            "format": POLICY_FORMAT,
            "version": POLICY_VERSION,
            "horizon": self.horizon,
            "belief_count": self.belief_count,
            "reduce_to": self.reduce_to,
            "model": self.model_spec,
            "gammas": [[{"action": a.action, "time_index": a.time_index, "modes": mix(a.mixture)}
                        for a in g] for g in self.gammas],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "PolicyStack":
        try:
            doc = json.loads(text)
            if doc.get("format") != POLICY_FORMAT:
                raise PolicyFormatError("not a policy file")
            if doc.get("version") != POLICY_VERSION:
                raise PolicyFormatError(f"unsupported policy version {doc.get('version')!r}")
            T = int(doc["horizon"])
            gammas = []
            for g in doc["gammas"]:
                row = []
                for a in g:
                    modes = a["modes"]
                    dim = None
                    for md in modes:
                        if len(md["m"]):
                            dim = len(md["m"][0])
                    dim = dim or 1
                    arrs = [(np.array(md["w"], float), np.array(md["m"], float).reshape(-1, dim),
                             np.array(md["S"], float).reshape(-1, dim, dim)) for md in modes]
                    act = a["action"]
                    row.append(AlphaFunction(HybridMixture(len(modes), dim, arrs),
                                             None if act is None else int(act), int(a["time_index"])))
                gammas.append(tuple(row))
            if len(gammas) != T + 1 or any(len(g) == 0 for g in gammas):
                raise PolicyFormatError("gamma sets do not match the horizon")
            return cls(tuple(gammas), T, int(doc["belief_count"]), doc["reduce_to"], doc.get("model") or {})
        except PolicyFormatError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise PolicyFormatError(f"corrupt policy file: {e}") from None

    @classmethod
    def load(cls, path) -> "PolicyStack":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except UnicodeDecodeError as e:
            raise PolicyFormatError(f"corrupt policy file: {e}") from None
        return cls.from_json(text)


def value(stack: PolicyStack, sigma, t: int = 0, stationary: bool = False, clamp: bool = True):
    """``max_alpha <alpha, sigma>`` over the set for step ``t`` and the maximizer's action.

    ``stationary`` uses the time-0 set at every step (any ``t >= 0``).
    Values are clamped to ``[0, 1]`` unless ``clamp`` is false.
    """
    if t < 0 or (not stationary and t > stack.horizon):
        raise ValueError(f"t={t} outside 0..{stack.horizon}" if t >= 0 else f"t={t} is negative")
    mix = sigma.mixture if isinstance(sigma, SufficientStatistic) else sigma
    gamma = stack.gammas[0 if stationary else t]
    vals = inner_products([a.mixture for a in gamma], mix)
    k = int(np.argmax(vals))
    v = float(vals[k])
    if clamp:
        v = min(1.0, max(0.0, v))
    return v, gamma[k].action


# ---------------------------------------------------------------------------
# belief sampling and the solver
# ---------------------------------------------------------------------------

def initial_statistic(model: HybridModel, mu0, s2: float = 0.1, q0: int | None = 0) -> SufficientStatistic:
    """``N(mu0, s2 I)`` in mode ``q0`` (or spread uniformly over modes if ``q0`` is None)."""
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    rho = HybridMixture.single_mode([1.0], mu0[None, :], (s2 * np.eye(model.n))[None])
    return _belief.init(rho, q0=q0, n_modes=model.n_modes)


def sample_belief_set(model: HybridModel, count: int, horizon: int, seed=0, reduce_to: int | None = 20,
                      s2: float = 0.1, q0: int = 0) -> list[SufficientStatistic]:
    """Statistics reached by random exploration.

    ``count`` trajectories of ``horizon`` steps start from ``N(mu0, s2)`` in
    mode ``q0`` with ``mu0`` uniform on the safe box; actions and observation
    cells are drawn uniformly. A statistic that dies is replaced by a fresh
    start. All visited statistics are pooled and ``count`` are drawn without
    replacement.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)

    def fresh():
        return initial_statistic(model, rng.uniform(model.safe_lower, model.safe_upper), s2, q0)

    pool = []
    for _ in range(count):
        s = fresh()
        pool.append(s)
        for _ in range(horizon):
            u = int(rng.integers(model.n_actions))
            y = (int(rng.integers(model.N_yx)), int(rng.integers(model.N_yq)))
            s = _belief.update(model, s, y, u, reduce_to=reduce_to)
            if _belief.is_dead(s):
                s = fresh()
            pool.append(s)
    pick = np.sort(rng.choice(len(pool), size=count, replace=False))
    return [pool[k] for k in pick]


def _same_alpha(a: AlphaFunction, b: AlphaFunction, tol: float = 1e-12) -> bool:
    if a.action != b.action:
        return False
    for q in range(a.mixture.n_modes):
        x, y = a.mixture.mode(q), b.mixture.mode(q)
        if x[0].size != y[0].size:
            return False
        if x[0].size == 0:
            continue
        ox = np.lexsort(np.column_stack([x[0], x[1], x[2].reshape(x[0].size, -1)]).T[::-1])
        oy = np.lexsort(np.column_stack([y[0], y[1], y[2].reshape(y[0].size, -1)]).T[::-1])
        for ax, ay in zip(x, y):
            if not np.allclose(ax[ox], ay[oy], rtol=0.0, atol=tol):
                return False
    return True


def _dedupe(alphas):
    kept = []
    for a in alphas:
        if not any(_same_alpha(a, k) for k in kept):
            kept.append(a)
    return kept


def solve(model: HybridModel, belief_set: Sequence[SufficientStatistic], horizon: int,
          reduce_to: int | None = 20, threads: int = 1,
          progress: Callable[[int, int], None] | None = None, model_spec: dict | None = None) -> PolicyStack:
    """Backward recursion from the fitted safe-set indicator.

    Every belief point is backed up at every step; identical results are
    kept once.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if len(belief_set) == 0:
        raise ValueError("belief_set must be nonempty")
    gammas = [None] * (horizon + 1)
    gammas[horizon] = (AlphaFunction(model.indicator.mixture, None, horizon),)
    for t in range(horizon - 1, -1, -1):
        cache = BackupCache(model, gammas[t + 1], reduce_to)

        def job(s, cache=cache, t=t):
            return point_backup(model, s, cache.gamma, reduce_to, cache=cache, time_index=t)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                alphas = list(ex.map(job, belief_set))
        else:
            alphas = [job(s) for s in belief_set]
        gammas[t] = tuple(_dedupe(alphas))
        if progress is not None:
            progress(t, len(gammas[t]))
    if model_spec is None:
        from .hsmodel import model_to_dict
        model_spec = model_to_dict(model)
    return PolicyStack(tuple(gammas), int(horizon), len(belief_set), reduce_to, model_spec)


# ---------------------------------------------------------------------------
# sampling-density diagnostic
# ---------------------------------------------------------------------------

def _sample_mixture(mix: HybridMixture, k: int, rng):
    """``k`` draws ``(x, q)`` from the normalized nonnegative mixture."""
    ws = np.concatenate([mix.mode(q)[0] for q in range(mix.n_modes)])
    qs = np.concatenate([np.full(mix.mode(q)[0].size, q) for q in range(mix.n_modes)])
    ms = np.concatenate([mix.mode(q)[1] for q in range(mix.n_modes)])
    Ss = np.concatenate([mix.mode(q)[2] for q in range(mix.n_modes)])
    comp = rng.choice(ws.size, size=k, p=ws / ws.sum())
    L = np.linalg.cholesky(Ss[comp])
    x = ms[comp] + (L @ rng.standard_normal((k, mix.dim, 1)))[..., 0]
    return x, qs[comp]


def _eval(mix: HybridMixture, x, q):
    out = np.zeros(len(q))
    for m in range(mix.n_modes):
        sel = q == m
        if sel.any():
            out[sel] = mix(x[sel] if mix.dim > 1 else x[sel, 0], m)
    return out


def _l1_estimate(a: HybridMixture, b: HybridMixture, n_samples: int, rng) -> float:
    ma, mb = a.total_weight(), b.total_weight()
    if ma <= 0 and mb <= 0:
        return 0.0
    if ma <= 0 or mb <= 0:
        return max(ma, mb)
    ka = int(rng.binomial(n_samples, 0.5))
    xa, qa = _sample_mixture(a, ka, rng)
    xb, qb = _sample_mixture(b, n_samples - ka, rng)
    x, q = np.concatenate([xa, xb]), np.concatenate([qa, qb])
    fa, fb = _eval(a, x, q), _eval(b, x, q)
    prop = 0.5 * fa / ma + 0.5 * fb / mb
    return float(np.mean(np.abs(fa - fb) / prop))


def delta_diagnostic(belief_set: Sequence, probe_set: Sequence, n_samples: int = 2000, seed=0) -> float:
    """Estimated ``max_probe min_belief ||probe - belief||_1``.

    Each distance is an importance-sampled estimate (proposal: the equal
    blend of the two normalized statistics), so the result is an estimate of
    the sampling density of the belief set, not a bound.
    """
    if len(probe_set) == 0:
        raise ValueError("probe_set must be nonempty")
    rng = np.random.default_rng(seed)
    mixes = [s.mixture if isinstance(s, SufficientStatistic) else s for s in belief_set]
    worst = 0.0
    for p in probe_set:
        pm = p.mixture if isinstance(p, SufficientStatistic) else p
        best = np.inf
        for b in mixes:
            if b is pm or b.canonical_key() == pm.canonical_key():
                best = 0.0
                break
            best = min(best, _l1_estimate(pm, b, n_samples, rng))
        worst = max(worst, best)
    return float(worst)
