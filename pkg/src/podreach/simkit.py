"""Monte Carlo simulation of a hybrid system under a policy."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import belief as _belief
from .hsmodel import HybridModel
from .pbvi import PolicyStack, initial_statistic, value

__all__ = ["TrajectoryRecord", "SweepRow", "simulate", "sweep_mu0", "write_sweep_csv", "SWEEP_HEADER"]

SWEEP_HEADER = ("mu0", "V_pbvi", "mc_estimate", "mc_stderr", "u0")


@dataclass(frozen=True)
class TrajectoryRecord:
    """One simulated run; it stops at the first unsafe state.

    ``seed`` is the run index: the run is the ``seed``-th child of the
    simulation's seed sequence.
    """

    states: tuple
    observations: tuple
    actions: tuple
    safe: bool
    seed: int


@dataclass(frozen=True)
class SweepRow:
    mu0: float
    V_pbvi: float
    mc_estimate: float
    mc_stderr: float
    u0: int | None


def _next_mode(model: HybridModel, x, q: int, u: int, rng) -> int:
    if model.tq_fits:
        p = np.array([model.tq_fits[(u, q, qn)].mixture(x, 0).item() if (u, q, qn) in model.tq_fits
                      else model.Tq[u, q, qn] for qn in range(model.n_modes)])
        p = np.clip(p, 0.0, None)
        p = p / p.sum()
    else:
        p = model.Tq[u, q]
    return int(rng.choice(model.n_modes, p=p))


def _run(model: HybridModel, policy, mu0, s2: float, q0: int, T: int, stationary: bool,
         reduce_to, seed_seq) -> TrajectoryRecord:
    rng = np.random.default_rng(seed_seq)
    n = model.n
    x = np.atleast_1d(mu0).astype(float) + math.sqrt(s2) * rng.standard_normal(n)
    q = int(q0)
    states, obs, acts = [(x.copy(), q)], [], []
    safe = bool(model.in_safe_set(x, q)[0])
    fixed = policy if isinstance(policy, (int, np.integer)) else None
    sigma = None if fixed is not None else initial_statistic(model, mu0, s2, q0)
    for t in range(T):
        if not safe:
            break
        if fixed is not None:
            u = int(fixed)
        else:
            _, u = value(policy, sigma, t, stationary=stationary)
        qn = _next_mode(model, x, q, u, rng)
        A, f, W = model.kernel(qn, u)
        x = A @ x + f + np.linalg.cholesky(W) @ rng.standard_normal(n)
        q = qn
        ch = model.observation(u)
        yx = int(ch.snap(x[0] + math.sqrt(ch.noise_var) * rng.standard_normal()))
        yq = 0 if model.perfect_mode_observation else int(rng.choice(model.N_yq, p=model.obs_q[u, q]))
        states.append((x.copy(), q))
        obs.append(yx)
        acts.append(u)
        safe = bool(model.in_safe_set(x, q)[0])
        if fixed is None and safe and t + 1 < T:
            sigma = _belief.update(model, sigma, (yx, yq), u, reduce_to=reduce_to)
            mass = sigma.total_mass
            if mass > 0:
                # the policy is invariant to scaling; renormalizing avoids underflow
                sigma = _belief.SufficientStatistic(sigma.mixture.scaled(1.0 / mass), sigma.time_index)
    run = int(seed_seq.spawn_key[-1]) if seed_seq.spawn_key else 0
    return TrajectoryRecord(tuple(states), tuple(obs), tuple(acts), safe, run)


def simulate(model: HybridModel, policy: PolicyStack | int, mu0, T: int, n_runs: int = 200, seed=0,
             s2: float = 0.1, q0: int = 0, stationary: bool = False, reduce_to="policy",
             threads: int = 1, return_records: bool = False):
    """Fraction of runs whose states ``x_0..x_T`` all stay in the safe set.

    Parameters
    ----------
    policy : PolicyStack or int
        Alpha-function stack queried online with the filtered statistic, or a
        fixed action.
    stationary : bool
        Use the time-0 alpha set at every step (any ``T``); otherwise ``T``
        must equal the stack's horizon.
    reduce_to : int, None or "policy"
        Component cap of the online statistic; defaults to the one used when
        solving.

    Returns
    -------
    estimate, stderr, records
        ``records`` is empty unless ``return_records`` is set.
    """
    if policy is None:
        raise ValueError("a policy stack (or fixed action) is required")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if isinstance(policy, PolicyStack):
        if not stationary and T != policy.horizon:
            raise ValueError(f"horizon {T} does not match the policy horizon {policy.horizon}")
        if reduce_to == "policy":
            reduce_to = policy.reduce_to
    elif reduce_to == "policy":
        reduce_to = 20
    children = np.random.SeedSequence(seed).spawn(n_runs)

    def job(ss):
        return _run(model, policy, mu0, s2, q0, T, stationary, reduce_to, ss)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            recs = list(ex.map(job, children))
    else:
        recs = [job(ss) for ss in children]
    p = sum(r.safe for r in recs) / n_runs
    stderr = math.sqrt(p * (1.0 - p) / n_runs)
    return p, stderr, (recs if return_records else [])


def sweep_mu0(model: HybridModel, policy: PolicyStack, mu0_grid: Sequence[float], T: int,
              n_runs: int = 200, seed=0, s2: float = 0.1, q0: int = 0, stationary: bool = False,
              threads: int = 1) -> list[SweepRow]:
    """PBVI value, first action and Monte Carlo estimate for each initial mean."""
    rows = []
    for k, mu0 in enumerate(mu0_grid):
        sigma0 = initial_statistic(model, mu0, s2, q0)
        v, u0 = value(policy, sigma0, 0, stationary=stationary)
        est, se, _ = simulate(model, policy, mu0, T, n_runs, seed=[int(seed), k], s2=s2, q0=q0,
                              stationary=stationary, threads=threads)
        rows.append(SweepRow(float(mu0), v, est, se, u0))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path=None) -> str:
    """RFC 4180 CSV with header ``mu0,V_pbvi,mc_estimate,mc_stderr,u0``."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\r\n")
    wr.writerow(SWEEP_HEADER)
    for r in rows:
        wr.writerow([repr(r.mu0), repr(r.V_pbvi), repr(r.mc_estimate), repr(r.mc_stderr),
                     "" if r.u0 is None else r.u0])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text
