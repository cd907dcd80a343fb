"""Closed-form algebra on weighted Gaussian mixtures over hybrid state spaces.

A :class:`HybridMixture` stores, for every discrete mode ``q``, a finite sum

    f(x, q) = sum_k w_k N(x; m_k, S_k)

with real (possibly negative) weights. Beliefs, alpha-functions and the fitted
indicator / observation functions all share this representation, so the
products, affine changes of variable and inner products below are the only
operations the solver needs.

Arrays follow one convention throughout: weights ``(k,)``, means ``(k, n)``,
covariances ``(k, n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import nnls
from scipy.special import ndtr
from scipy.stats import multivariate_normal

from . import _kernels

EPS_PD = 1e-12
_LOG_2PI = np.log(2.0 * np.pi)

__all__ = [
    "EPS_PD",
    "WeightedGaussian",
    "HybridMixture",
    "product",
    "affine_pushforward",
    "inner_product",
    "interval_mass",
    "reduce",
    "ReductionResult",
]


class DimensionError(ValueError):
    """Raised when mixture dimensions or mode counts disagree."""


class NotPositiveDefiniteError(ValueError):
    """Raised when a covariance is not (numerically) positive definite."""


# ---------------------------------------------------------------------------
# batched linear algebra with a scalar fast path (the benchmark is 1-D)
# ---------------------------------------------------------------------------

def _inv(S):
    if S.shape[-1] == 1:
        return 1.0 / S
    return np.linalg.inv(S)


def _logdet(S):
    if S.shape[-1] == 1:
        return np.log(S[..., 0, 0])
    return np.linalg.slogdet(S)[1]


def _det(S):
    if S.shape[-1] == 1:
        return S[..., 0, 0]
    return np.linalg.det(S)


def log_gauss(x, m, S):
    """Log density ``log N(x; m, S)``, broadcasting over leading axes."""
    d = np.asarray(x, dtype=float) - np.asarray(m, dtype=float)
    n = d.shape[-1]
    if n == 1:
        s = S[..., 0, 0]
        return -0.5 * (_LOG_2PI + np.log(s) + d[..., 0] ** 2 / s)
    S, d = np.broadcast_arrays(S, d[..., None])
    sol = np.linalg.solve(S, d)[..., 0]
    q = np.sum(d[..., 0] * sol, axis=-1)
    return -0.5 * (n * _LOG_2PI + _logdet(S) + q)


def overlap_matrix(mA, SA, mB, SB):
    """Matrix of ``N(mA_i; mB_j, SA_i + SB_j)``: integrals of pairwise products."""
    if mA.shape[-1] == 1:
        s = SA[:, None, 0, 0] + SB[None, :, 0, 0]
        d = mA[:, None, 0] - mB[None, :, 0]
        return np.exp(-0.5 * d * d / s) / np.sqrt(2.0 * np.pi * s)
    return np.exp(log_gauss(mA[:, None, :], mB[None, :, :], SA[:, None] + SB[None, :]))


def _check_pd(S, what="covariance"):
    S = np.asarray(S, dtype=float)
    if S.shape[-1] == 1:
        bad = ~(S[..., 0, 0] > EPS_PD)
    else:
        bad = ~(np.linalg.eigvalsh(S).min(axis=-1) > EPS_PD)
    if np.any(bad):
        raise NotPositiveDefiniteError(f"{what} is not positive definite")


def _symmetrize(S):
    return 0.5 * (S + np.swapaxes(S, -1, -2))


# ---------------------------------------------------------------------------
# single components
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightedGaussian:
    """One mixture component ``weight * N(x; mean, cov)``."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionError(f"mean shape {mean.shape} incompatible with cov shape {cov.shape}")
        if not np.isfinite(self.weight):
            raise ValueError("weight must be finite")
        cov = _symmetrize(cov)
        _check_pd(cov)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return self.weight * np.exp(log_gauss(x, self.mean, self.cov))


def product(a: WeightedGaussian, b: WeightedGaussian) -> WeightedGaussian:
    """Pointwise product of two weighted Gaussians, itself a weighted Gaussian.

    ``N(x; m1, S1) N(x; m2, S2) = N(m1; m2, S1 + S2) N(x; m, S)`` with
    ``S = (S1^-1 + S2^-1)^-1`` and ``m = S (S1^-1 m1 + S2^-1 m2)``.
    """
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    Pa, Pb = np.linalg.inv(a.cov), np.linalg.inv(b.cov)
    cov = np.linalg.inv(Pa + Pb)
    mean = cov @ (Pa @ a.mean + Pb @ b.mean)
    scale = np.exp(log_gauss(a.mean, b.mean, a.cov + b.cov))
    return WeightedGaussian(a.weight * b.weight * scale, mean, cov)


def affine_pushforward(g: WeightedGaussian, A, f) -> WeightedGaussian:
    """Re-express a linear-Gaussian kernel as a Gaussian in the source state.

    ``g`` encodes ``w * N(x'; A x + f, W)`` at a fixed ``x'`` (``g.mean`` is
    ``x'``, ``g.cov`` is ``W``). The result is the same function of ``x``:
    ``w |A^-1| N(x; A^-1 (x' - f), A^-1 W A^-T)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    f = np.atleast_1d(np.asarray(f, dtype=float))
    if A.shape != (g.dim, g.dim) or f.shape != (g.dim,):
        raise DimensionError("A/f shapes do not match the Gaussian dimension")
    detA = np.linalg.det(A)
    if not abs(detA) > EPS_PD:
        raise np.linalg.LinAlgError("A is singular")
    Ainv = np.linalg.inv(A)
    return WeightedGaussian(g.weight / abs(detA), Ainv @ (g.mean - f), Ainv @ g.cov @ Ainv.T)


# ---------------------------------------------------------------------------
# mixtures
# ---------------------------------------------------------------------------

def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


class HybridMixture:
    """Per-mode Gaussian sums over ``R^n x {0..n_modes-1}``.

    Instances are treated as immutable: every operation returns a new object.

    Parameters
    ----------
    n_modes : int
        Number of discrete modes.
    dim : int
        Continuous state dimension ``n``.
    modes : sequence of (weights, means, covs)
        One triple per mode, shapes ``(k,)``, ``(k, n)``, ``(k, n, n)``.
    validate : bool
        Check covariances for positive definiteness (skipped on hot paths
        whose inputs are already valid).
    """

    __slots__ = ("n_modes", "dim", "_modes")

    def __init__(self, n_modes: int, dim: int, modes: Sequence, validate: bool = True):
        if n_modes < 1:
            raise ValueError("n_modes must be positive")
        if len(modes) != n_modes:
            raise DimensionError(f"expected {n_modes} mode entries, got {len(modes)}")
        out = []
        for q, (w, m, S) in enumerate(modes):
            w = np.asarray(w, dtype=float).reshape(-1)
            m = np.asarray(m, dtype=float).reshape(w.size, dim)
            S = np.asarray(S, dtype=float).reshape(w.size, dim, dim)
            if validate:
                if not np.all(np.isfinite(w)):
                    raise ValueError(f"mode {q}: non-finite weight")
                S = _symmetrize(S)
                if w.size:
                    _check_pd(S, f"mode {q} covariance")
            _freeze(w, m, S)
            out.append((w, m, S))
        self.n_modes = int(n_modes)
        self.dim = int(dim)
        self._modes = tuple(out)

    # -- construction ------------------------------------------------------

    @classmethod
    def empty(cls, n_modes: int, dim: int) -> "HybridMixture":
        z = (np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))
        return cls(n_modes, dim, [z] * n_modes, validate=False)

    @classmethod
    def from_components(cls, n_modes: int, components: dict, dim: int | None = None) -> "HybridMixture":
        """Build from ``{mode: [WeightedGaussian, ...]}``; missing modes are empty."""
        if dim is None:
            dims = {g.dim for comps in components.values() for g in comps}
            if len(dims) != 1:
                raise DimensionError("cannot infer a single dimension from components")
            dim = dims.pop()
        modes = []
        for q in range(n_modes):
            comps = list(components.get(q, []))
            if any(g.dim != dim for g in comps):
                raise DimensionError(f"mode {q}: component dimension differs from {dim}")
            modes.append((
                np.array([g.weight for g in comps], dtype=float),
                np.array([g.mean for g in comps], dtype=float).reshape(len(comps), dim),
                np.array([g.cov for g in comps], dtype=float).reshape(len(comps), dim, dim),
            ))
        return cls(n_modes, dim, modes)

    @classmethod
    def single_mode(cls, w, m, S, n_modes: int = 1, mode: int = 0, validate: bool = True) -> "HybridMixture":
        """Mixture with all components in ``mode`` and the other modes empty."""
        m = np.asarray(m, dtype=float)
        dim = m.shape[-1] if m.ndim >= 2 else (1 if m.ndim <= 1 else m.shape[-1])
        w = np.asarray(w, dtype=float).reshape(-1)
        m = m.reshape(w.size, dim)
        S = np.asarray(S, dtype=float).reshape(w.size, dim, dim)
        e = (np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))
        modes = [e] * n_modes
        modes[mode] = (w, m, S)
        return cls(n_modes, dim, modes, validate=validate)

    # -- access ------------------------------------------------------------

    def mode(self, q: int):
        """``(weights, means, covs)`` arrays of mode ``q`` (read-only)."""
        return self._modes[q]

    def components(self, q: int) -> list[WeightedGaussian]:
        w, m, S = self._modes[q]
        return [WeightedGaussian(w[k], m[k], S[k]) for k in range(w.size)]

    def n_components(self, q: int | None = None) -> int:
        if q is None:
            return sum(w.size for w, _, _ in self._modes)
        return self._modes[q][0].size

    def mode_weight(self, q: int) -> float:
        return float(self._modes[q][0].sum())

    def total_weight(self) -> float:
        """Sum of all weights; the integral of the mixture over the hybrid space."""
        return float(sum(w.sum() for w, _, _ in self._modes))

    def is_zero(self) -> bool:
        return all(not np.any(w) for w, _, _ in self._modes)

    def __call__(self, x, q: int):
        """Evaluate ``f(x, q)``; ``x`` has shape ``(..., n)`` (or ``(...)`` when n = 1)."""
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        w, m, S = self._modes[q]
        if w.size == 0:
            return np.zeros(x.shape[:-1])
        vals = np.exp(log_gauss(x[..., None, :], m, S))
        return vals @ w

    # -- linear structure --------------------------------------------------

    def scaled(self, c: float | Sequence[float]) -> "HybridMixture":
        """Multiply by a scalar, or by one scalar per mode."""
        c = np.broadcast_to(np.asarray(c, dtype=float), (self.n_modes,))
        return HybridMixture(self.n_modes, self.dim,
                             [(w * c[q], m, S) for q, (w, m, S) in enumerate(self._modes)],
                             validate=False)

    def __add__(self, other: "HybridMixture") -> "HybridMixture":
        _check_compatible(self, other)
        return HybridMixture(self.n_modes, self.dim, [
            (np.concatenate([a[0], b[0]]), np.concatenate([a[1], b[1]]), np.concatenate([a[2], b[2]]))
            for a, b in zip(self._modes, other._modes)
        ], validate=False)

    def __mul__(self, c: float) -> "HybridMixture":
        return self.scaled(c)

    __rmul__ = __mul__

    def pruned(self, rel_tol: float = 1e-12) -> "HybridMixture":
        """Drop components whose |weight| is below ``rel_tol`` times the total |weight|."""
        total = sum(np.abs(w).sum() for w, _, _ in self._modes)
        cut = rel_tol * total
        modes = []
        for w, m, S in self._modes:
            keep = np.abs(w) > cut
            modes.append((w[keep], m[keep], S[keep]))
        return HybridMixture(self.n_modes, self.dim, modes, validate=False)

    def with_modes(self, modes) -> "HybridMixture":
        return HybridMixture(self.n_modes, self.dim, modes, validate=False)

    def canonical_key(self) -> bytes:
        """Byte string identifying the exact component multiset."""
        parts = []
        for w, m, S in self._modes:
            rec = np.concatenate([w[:, None], m, S.reshape(w.size, self.dim * self.dim)], axis=1)
            order = np.lexsort(rec.T[::-1])
            parts.append(np.ascontiguousarray(rec[order]).tobytes())
            parts.append(b"|")
        return b"".join(parts)

    def __repr__(self):
        counts = ",".join(str(self.n_components(q)) for q in range(self.n_modes))
        return f"HybridMixture(n_modes={self.n_modes}, dim={self.dim}, components=[{counts}])"


def _check_compatible(a: HybridMixture, b: HybridMixture):
    if a.n_modes != b.n_modes or a.dim != b.dim:
        raise DimensionError(
            f"incompatible mixtures: modes {a.n_modes} vs {b.n_modes}, dim {a.dim} vs {b.dim}")


# ---------------------------------------------------------------------------
# array-level building blocks shared by the belief update and the backups
# ---------------------------------------------------------------------------

def multiply_arrays(wa, ma, Sa, wb, mb, Sb):
    """All pairwise products of two component sets, flattened a-major."""
    ka, kb = wa.size, wb.size
    n = ma.shape[-1] if ma.ndim == 2 else mb.shape[-1]
    if ka == 0 or kb == 0:
        return np.zeros(0), np.zeros((0, n)), np.zeros((0, n, n))
    if n == 1:
        sa, sb = Sa[:, 0, 0][:, None], Sb[:, 0, 0][None, :]
        xa, xb = ma[:, 0][:, None], mb[:, 0][None, :]
        ssum = sa + sb
        d = xa - xb
        scale = np.exp(-0.5 * d * d / ssum) / np.sqrt(2.0 * np.pi * ssum)
        s = sa * sb / ssum
        mu = (xa * sb + xb * sa) / ssum
        w = wa[:, None] * wb[None, :] * scale
        return w.reshape(-1), mu.reshape(-1, 1), s.reshape(-1, 1, 1)
    Pa, Pb = _inv(Sa), _inv(Sb)
    S = _inv(Pa[:, None] + Pb[None, :])
    rhs = (Pa @ ma[..., None])[:, None] + (Pb @ mb[..., None])[None, :]
    mu = (S @ rhs)[..., 0]
    scale = np.exp(log_gauss(ma[:, None, :], mb[None, :, :], Sa[:, None] + Sb[None, :]))
    w = wa[:, None] * wb[None, :] * scale
    return w.reshape(-1), mu.reshape(-1, n), _symmetrize(S.reshape(-1, n, n))


def push_arrays(w, m, S, A, f, W):
    """Propagate components through ``x' = A x + f + N(0, W)``."""
    if w.size == 0:
        return w, m, S
    mn = m @ A.T + f
    Sn = A @ S @ A.T + W
    return w, mn, _symmetrize(Sn)


def pull_arrays(w, m, S, A, f, W):
    """Integrate components against the kernel: ``x -> int g(x') N(x'; A x + f, W) dx'``.

    Each ``w N(x'; m, S)`` becomes ``w |A|^-1 N(x; A^-1 (m - f), A^-1 (S + W) A^-T)``.
    """
    if w.size == 0:
        return w, m, S
    Ainv = np.linalg.inv(A)
    detA = abs(np.linalg.det(A))
    mn = (m - f) @ Ainv.T
    Sn = Ainv @ (S + W) @ Ainv.T
    return w / detA, mn, _symmetrize(Sn)


def mixture_product(a: HybridMixture, b: HybridMixture) -> HybridMixture:
    """Pointwise product ``a(x, q) b(x, q)`` as a mixture."""
    _check_compatible(a, b)
    return a.with_modes([multiply_arrays(*a.mode(q), *b.mode(q)) for q in range(a.n_modes)])


# ---------------------------------------------------------------------------
# inner products and set masses
# ---------------------------------------------------------------------------

def _mode_inner(wa, ma, Sa, wb, mb, Sb) -> float:
    if wa.size == 0 or wb.size == 0:
        return 0.0
    return float(wa @ overlap_matrix(ma, Sa, mb, Sb) @ wb)


def inner_product(a: HybridMixture, b: HybridMixture) -> float:
    """``<a, b> = sum_q int a(x, q) b(x, q) dx`` in closed form.

    The operands are put in a canonical order first so that the result is
    bitwise symmetric.
    """
    _check_compatible(a, b)
    if a is not b and b.canonical_key() < a.canonical_key():
        a, b = b, a
    return float(sum(_mode_inner(*a.mode(q), *b.mode(q)) for q in range(a.n_modes)))


def inner_products(alphas: Sequence[HybridMixture], b: HybridMixture) -> np.ndarray:
    """Vector of ``<alpha_i, b>``, batched per mode (no canonical ordering)."""
    out = np.zeros(len(alphas))
    for q in range(b.n_modes):
        wb, mb, Sb = b.mode(q)
        if wb.size == 0:
            continue
        sizes = [al.mode(q)[0].size for al in alphas]
        if sum(sizes) == 0:
            continue
        W = np.concatenate([al.mode(q)[0] for al in alphas])
        M = np.concatenate([al.mode(q)[1] for al in alphas])
        S = np.concatenate([al.mode(q)[2] for al in alphas])
        vals = W * (overlap_matrix(M, S, mb, Sb) @ wb)
        idx = np.repeat(np.arange(len(alphas)), sizes)
        out += np.bincount(idx, weights=vals, minlength=len(alphas))
    return out


def interval_mass(m: HybridMixture, lower, upper, modes: Iterable[int] | None = None) -> float:
    """Integral of the mixture over the box ``[lower, upper]`` summed over ``modes``.

    Exact (Gaussian CDFs) in 1-D and for diagonal covariances; otherwise uses
    scipy's Genz integration, which is approximate.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != (m.dim,) or upper.shape != (m.dim,):
        raise DimensionError("box bounds must have one entry per dimension")
    if np.any(upper <= lower):
        raise ValueError("empty box")
    modes = range(m.n_modes) if modes is None else modes
    total = 0.0
    for q in modes:
        w, mu, S = m.mode(q)
        if w.size == 0:
            continue
        var = np.diagonal(S, axis1=1, axis2=2)
        offdiag = S - var[:, :, None] * np.eye(m.dim)
        if m.dim == 1 or not np.any(offdiag):
            sd = np.sqrt(var)
            p = ndtr((upper - mu) / sd) - ndtr((lower - mu) / sd)
            total += float(w @ np.prod(p, axis=1))
        else:
            for k in range(w.size):
                p = multivariate_normal(mu[k], S[k]).cdf(upper, lower_limit=lower)
                total += w[k] * p
    return float(total)


# ---------------------------------------------------------------------------
# mixture reduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReductionResult:
    mixture: HybridMixture
    merge_costs: tuple  # per mode, array of integral-squared-error costs of each merge


_BLOCK = 256


_BAND = 10


def _greedy(w, m, S, target):
    if m.shape[-1] == 1 and w.size > 4 * _BAND:
        order = np.argsort(m[:, 0], kind="stable")
        rw, rm, rs, c = _kernels.banded_reduce_1d(w[order], m[order, 0], S[order, 0, 0],
                                                  int(target), _BAND)
        return rw, rm[:, None], rs[:, None, None], c
    if m.shape[-1] == 1:
        rw, rm, rs, c = _kernels.greedy_reduce_1d(np.ascontiguousarray(w), np.ascontiguousarray(m[:, 0]),
                                                  np.ascontiguousarray(S[:, 0, 0]), int(target))
        return rw, rm[:, None], rs[:, None, None], c
    return _kernels.greedy_reduce(np.ascontiguousarray(w), np.ascontiguousarray(m),
                                  np.ascontiguousarray(S), int(target))


def _reduce_group(w, m, S, target):
    """Reduce one same-sign group to ``target`` components.

    Very large groups are first cut down blockwise (blocks of nearby means) so
    the all-pairs cost matrix stays small.
    """
    costs = []
    while m.shape[-1] > 1 and w.size > 4 * _BLOCK and w.size > target:
        order = np.lexsort(m.T[::-1])
        w, m, S = w[order], m[order], S[order]
        nb = int(np.ceil(w.size / _BLOCK))
        per = max(int(np.ceil(max(target, w.size // 2) / nb)), 1)
        parts = []
        for b in range(nb):
            sl = slice(b * _BLOCK, (b + 1) * _BLOCK)
            rw, rm, rS, c = _greedy(w[sl], m[sl], S[sl], per)
            parts.append((rw, rm, rS))
            costs.append(c)
        w = np.concatenate([p[0] for p in parts])
        m = np.concatenate([p[1] for p in parts])
        S = np.concatenate([p[2] for p in parts])
    rw, rm, rS, c = _greedy(w, m, S, target)
    costs.append(c)
    return rw, rm, rS, np.concatenate(costs)


def reduce_arrays(w, m, S, target: int):
    """Array-level reduction; see :func:`reduce`."""
    if w.size <= target:
        return w, m, S, np.zeros(0)
    pos, neg = w > 0, w < 0
    npos, nneg = int(pos.sum()), int(neg.sum())
    if npos + nneg <= target:
        keep = pos | neg
        return w[keep], m[keep], S[keep], np.zeros(0)
    if nneg == 0 or npos == 0:
        sel = pos if npos else neg
        return _reduce_group(w[sel], m[sel], S[sel], target)
    # split the budget between signs, proportional to group size
    tpos = min(npos, max(1, int(round(target * npos / (npos + nneg)))))
    tneg = min(nneg, max(1, target - tpos))
    tpos = min(npos, max(1, target - tneg))
    a = _reduce_group(w[pos], m[pos], S[pos], tpos)
    b = _reduce_group(w[neg], m[neg], S[neg], tneg)
    return (np.concatenate([a[0], b[0]]), np.concatenate([a[1], b[1]]),
            np.concatenate([a[2], b[2]]), np.concatenate([a[3], b[3]]))


def reduce(m: HybridMixture, target: int, return_costs: bool = False):
    """Cap the number of components per mode at ``target``.

    Greedy pairwise merging: the pair whose moment-preserving merge adds the
    least integral squared error (closed form, from Gaussian overlaps) is
    merged first. Positive and negative components are merged separately, so
    per-mode total weight is preserved exactly. With mixed signs and
    ``target == 1`` the result keeps one component per sign.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    modes, costs = [], []
    for q in range(m.n_modes):
        w, mu, S, c = reduce_arrays(*m.mode(q), target)
        modes.append((w, mu, S))
        costs.append(c)
    out = m.with_modes(modes)
    if return_costs:
        return ReductionResult(out, tuple(costs))
    return out


def project_weights(bm, bS, w, m, S) -> np.ndarray:
    """Nonnegative weights on the fixed components ``(bm, bS)`` closest in L2 to ``(w, m, S)``.

    Minimizes ``||sum_i v_i N(bm_i, bS_i) - f||_2`` over ``v >= 0`` using the
    closed-form Gram matrix, so no quadrature grid is needed.
    """
    G = overlap_matrix(bm, bS, bm, bS)
    c = overlap_matrix(bm, bS, m, S) @ w
    jitter = 1e-12 * np.trace(G) / max(len(G), 1)
    L = np.linalg.cholesky(G + jitter * np.eye(len(G)))
    v, _ = nnls(L.T, np.linalg.solve(L, c), maxiter=50 * len(G))
    return v


def multiply_collapse(wa, ma, Sa, wb, mb, Sb, rel_ise: float = 1e-4):
    """Products ``a * b_l`` with each Gaussian-like group collapsed to one component.

    For every ``b_l`` the products with all components of ``a`` are replaced
    by one Gaussian carrying their exact mass, mean and covariance, provided
    the integral squared error of doing so is below ``rel_ise`` times the
    group's squared L2 norm. Other groups are returned uncollapsed. Requires
    nonnegative weights.
    """
    n = mb.shape[-1]
    ka, kb = wa.size, wb.size
    if ka == 0 or kb == 0:
        return np.zeros(0), np.zeros((0, n)), np.zeros((0, n, n))
    w, m, S = multiply_arrays(wb, mb, Sb, wa, ma, Sa)
    w = w.reshape(kb, ka)
    m = m.reshape(kb, ka, n)
    S = S.reshape(kb, ka, n, n)
    mass = w.sum(axis=1)
    live = mass > 0
    w, m, S, mass = w[live], m[live], S[live], mass[live]
    kb = w.shape[0]
    p = w / mass[:, None]
    mu = np.einsum("lk,lkd->ld", p, m)
    d = m - mu[:, None, :]
    cov = _symmetrize(np.einsum("lk,lkde->lde", p, S + d[..., :, None] * d[..., None, :]))
    # closed-form ISE between each group and its collapse
    if n == 1:
        s, x = S[..., 0, 0], m[..., 0]
        ss = s[:, :, None] + s[:, None, :]
        dd = x[:, :, None] - x[:, None, :]
        gg = np.exp(-0.5 * dd * dd / ss) / np.sqrt(2 * np.pi * ss)
        sc = s + cov[:, 0, 0][:, None]
        dc = x - mu[:, 0][:, None]
        gc = np.exp(-0.5 * dc * dc / sc) / np.sqrt(2 * np.pi * sc)
        cc = 1.0 / np.sqrt(4 * np.pi * cov[:, 0, 0])
    else:
        gg = np.exp(log_gauss(m[:, :, None, :], m[:, None, :, :], S[:, :, None] + S[:, None, :]))
        gc = np.exp(log_gauss(m, mu[:, None, :], S + cov[:, None]))
        cc = np.exp(log_gauss(mu, mu, 2 * cov))
    self_norm = np.einsum("lk,lkj,lj->l", w, gg, w)
    ise = self_norm - 2 * mass * np.einsum("lk,lk->l", w, gc) + mass ** 2 * cc
    ok = ise <= rel_ise * self_norm
    if ok.all():
        return mass, mu, cov
    rest = ~ok
    return (np.concatenate([mass[ok], w[rest].reshape(-1)]),
            np.concatenate([mu[ok], m[rest].reshape(-1, n)]),
            np.concatenate([cov[ok], S[rest].reshape(-1, n, n)]))
