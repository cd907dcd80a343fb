"""Compiled inner loops for Gaussian mixture reduction.

Everything here works on raw arrays: ``w`` (k,), ``m`` (k, n), ``S`` (k, n, n).
"""

import numba as nb
import numpy as np

_LOG_2PI = np.log(2.0 * np.pi)


@nb.njit(cache=True)
def _chol(S):
    n = S.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = S[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            if i == j:
                if s <= 0.0:
                    s = 1e-300
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return L


@nb.njit(cache=True)
def _log_gauss(d, S):
    """log N(d; 0, S) for a small dense S."""
    n = d.shape[0]
    if n == 1:
        return -0.5 * (_LOG_2PI + np.log(S[0, 0]) + d[0] * d[0] / S[0, 0])
    L = _chol(S)
    z = np.zeros(n)
    logdet = 0.0
    for i in range(n):
        s = d[i]
        for p in range(i):
            s -= L[i, p] * z[p]
        z[i] = s / L[i, i]
        logdet += np.log(L[i, i])
    q = 0.0
    for i in range(n):
        q += z[i] * z[i]
    return -0.5 * (n * _LOG_2PI + q) - logdet


@nb.njit(cache=True)
def _self_overlap(S):
    """<phi, phi> = N(0; 0, 2S) for one component."""
    return np.exp(_log_gauss(np.zeros(S.shape[0]), 2.0 * S))


@nb.njit(cache=True)
def _overlap(m1, S1, m2, S2):
    return np.exp(_log_gauss(m1 - m2, S1 + S2))


@nb.njit(cache=True)
def _merge(w1, m1, S1, w2, m2, S2):
    w = w1 + w2
    a = w1 / w
    b = w2 / w
    m = a * m1 + b * m2
    d = m1 - m2
    n = m.shape[0]
    S = a * S1 + b * S2
    for i in range(n):
        for j in range(n):
            S[i, j] += a * b * d[i] * d[j]
    for i in range(n):
        for j in range(i):
            v = 0.5 * (S[i, j] + S[j, i])
            S[i, j] = v
            S[j, i] = v
    return w, m, S


@nb.njit(cache=True)
def _pair_cost(w1, m1, S1, q1, w2, m2, S2, q2):
    """Integral squared error between the pair and its moment-matched merge."""
    wm, mm, Sm = _merge(w1, m1, S1, w2, m2, S2)
    qm = _self_overlap(Sm)
    q12 = _overlap(m1, S1, m2, S2)
    q1m = _overlap(m1, S1, mm, Sm)
    q2m = _overlap(m2, S2, mm, Sm)
    c = (w1 * w1 * q1 + w2 * w2 * q2 + wm * wm * qm + 2.0 * w1 * w2 * q12
         - 2.0 * wm * (w1 * q1m + w2 * q2m))
    return c


@nb.njit(cache=True)
def greedy_reduce(w, m, S, target):
    """Greedy pairwise merging of a same-sign component group.

    Returns the reduced arrays plus the list of costs of the merges performed,
    in order.
    """
    k = w.shape[0]
    w = w.copy()
    m = m.copy()
    S = S.copy()
    costs_done = np.zeros(max(k - target, 0))
    if k <= target:
        return w, m, S, costs_done
    q = np.empty(k)
    for i in range(k):
        q[i] = _self_overlap(S[i])
    cost = np.full((k, k), np.inf)
    for i in range(k):
        for j in range(i + 1, k):
            c = _pair_cost(w[i], m[i], S[i], q[i], w[j], m[j], S[j], q[j])
            cost[i, j] = c
            cost[j, i] = c
    alive = np.ones(k, dtype=np.bool_)
    rowmin = np.full(k, np.inf)
    rowarg = np.full(k, -1)
    for i in range(k):
        for j in range(k):
            if cost[i, j] < rowmin[i]:
                rowmin[i] = cost[i, j]
                rowarg[i] = j
    count = k
    step = 0
    while count > target:
        best = np.inf
        i = -1
        for r in range(k):
            if alive[r] and rowmin[r] < best:
                best = rowmin[r]
                i = r
        if i < 0:
            # only infinite costs left (e.g. all remaining pairs invalid)
            break
        j = rowarg[i]
        if j < i:
            i, j = j, i
        costs_done[step] = best
        step += 1
        wn, mn, Sn = _merge(w[i], m[i], S[i], w[j], m[j], S[j])
        w[i] = wn
        m[i] = mn
        S[i] = Sn
        q[i] = _self_overlap(Sn)
        alive[j] = False
        count -= 1
        for r in range(k):
            cost[j, r] = np.inf
            cost[r, j] = np.inf
        rowmin[j] = np.inf
        rowarg[j] = -1
        for r in range(k):
            if alive[r] and r != i:
                c = _pair_cost(w[i], m[i], S[i], q[i], w[r], m[r], S[r], q[r])
                cost[i, r] = c
                cost[r, i] = c
        rowmin[i] = np.inf
        rowarg[i] = -1
        for r in range(k):
            if cost[i, r] < rowmin[i]:
                rowmin[i] = cost[i, r]
                rowarg[i] = r
        for r in range(k):
            if not alive[r] or r == i:
                continue
            if rowarg[r] == i or rowarg[r] == j:
                rowmin[r] = np.inf
                rowarg[r] = -1
                for c2 in range(k):
                    if cost[r, c2] < rowmin[r]:
                        rowmin[r] = cost[r, c2]
                        rowarg[r] = c2
            elif cost[r, i] < rowmin[r]:
                rowmin[r] = cost[r, i]
                rowarg[r] = i
    keep = np.flatnonzero(alive)
    return w[keep], m[keep], S[keep], costs_done[:step]


@nb.njit(cache=True)
def _pair_cost_1d(w1, m1, s1, q1, w2, m2, s2, q2):
    wm = w1 + w2
    a = w1 / wm
    b = w2 / wm
    mm = a * m1 + b * m2
    d = m1 - m2
    sm = a * s1 + b * s2 + a * b * d * d
    qm = 1.0 / np.sqrt(4.0 * np.pi * sm)
    t = s1 + s2
    q12 = np.exp(-0.5 * d * d / t) / np.sqrt(2.0 * np.pi * t)
    d1 = m1 - mm
    t = s1 + sm
    q1m = np.exp(-0.5 * d1 * d1 / t) / np.sqrt(2.0 * np.pi * t)
    d2 = m2 - mm
    t = s2 + sm
    q2m = np.exp(-0.5 * d2 * d2 / t) / np.sqrt(2.0 * np.pi * t)
    return (w1 * w1 * q1 + w2 * w2 * q2 + wm * wm * qm + 2.0 * w1 * w2 * q12
            - 2.0 * wm * (w1 * q1m + w2 * q2m))


@nb.njit(cache=True)
def greedy_reduce_1d(w, m, s, target):
    """Scalar-state specialisation of :func:`greedy_reduce` (``m``, ``s`` are 1-D)."""
    k = w.shape[0]
    w = w.copy()
    m = m.copy()
    s = s.copy()
    costs_done = np.zeros(max(k - target, 0))
    if k <= target:
        return w, m, s, costs_done
    q = 1.0 / np.sqrt(4.0 * np.pi * s)
    cost = np.full((k, k), np.inf)
    for i in range(k):
        for j in range(i + 1, k):
            c = _pair_cost_1d(w[i], m[i], s[i], q[i], w[j], m[j], s[j], q[j])
            cost[i, j] = c
            cost[j, i] = c
    alive = np.ones(k, dtype=np.bool_)
    rowmin = np.full(k, np.inf)
    rowarg = np.full(k, -1)
    for i in range(k):
        for j in range(k):
            if cost[i, j] < rowmin[i]:
                rowmin[i] = cost[i, j]
                rowarg[i] = j
    count = k
    step = 0
    while count > target:
        best = np.inf
        i = -1
        for r in range(k):
            if alive[r] and rowmin[r] < best:
                best = rowmin[r]
                i = r
        if i < 0:
            break
        j = rowarg[i]
        if j < i:
            i, j = j, i
        costs_done[step] = best
        step += 1
        wm = w[i] + w[j]
        a = w[i] / wm
        b = w[j] / wm
        d = m[i] - m[j]
        s[i] = a * s[i] + b * s[j] + a * b * d * d
        m[i] = a * m[i] + b * m[j]
        w[i] = wm
        q[i] = 1.0 / np.sqrt(4.0 * np.pi * s[i])
        alive[j] = False
        count -= 1
        for r in range(k):
            cost[j, r] = np.inf
            cost[r, j] = np.inf
        rowmin[j] = np.inf
        rowarg[j] = -1
        rowmin[i] = np.inf
        rowarg[i] = -1
        for r in range(k):
            if alive[r] and r != i:
                c = _pair_cost_1d(w[i], m[i], s[i], q[i], w[r], m[r], s[r], q[r])
                cost[i, r] = c
                cost[r, i] = c
                if c < rowmin[i]:
                    rowmin[i] = c
                    rowarg[i] = r
        for r in range(k):
            if not alive[r] or r == i:
                continue
            if rowarg[r] == i or rowarg[r] == j:
                rowmin[r] = np.inf
                rowarg[r] = -1
                for c2 in range(k):
                    if cost[r, c2] < rowmin[r]:
                        rowmin[r] = cost[r, c2]
                        rowarg[r] = c2
            elif cost[r, i] < rowmin[r]:
                rowmin[r] = cost[r, i]
                rowarg[r] = i
    keep = np.flatnonzero(alive)
    return w[keep], m[keep], s[keep], costs_done[:step]


@nb.njit(cache=True)
def _row_1d(r, nxt, w, m, s, q, band, C, N, fresh, oldC, oldN):
    """Refresh row ``r`` of the banded cost table; costs to nodes other than
    ``fresh`` are reused from the previous row contents."""
    j = nxt[r]
    best = np.inf
    arg = -1
    for e in range(band):
        oldC[e] = C[r, e]
        oldN[e] = N[r, e]
    for d in range(band):
        if j < 0:
            C[r, d] = np.inf
            N[r, d] = -1
            continue
        c = np.inf
        found = False
        if r != fresh and j != fresh:
            for e in range(band):
                if oldN[e] == j:
                    c = oldC[e]
                    found = True
                    break
        if not found:
            c = _pair_cost_1d(w[r], m[r], s[r], q[r], w[j], m[j], s[j], q[j])
        C[r, d] = c
        N[r, d] = j
        if c < best:
            best = c
            arg = d
        j = nxt[j]
    return best, arg


@nb.njit(cache=True)
def banded_reduce_1d(w, m, s, target, band):
    """Greedy merging restricted to pairs that are within ``band`` places in mean order.

    Inputs must be sorted by mean. Cost per merge is O(band^2 + k) instead of
    O(k^2), which matters for the thousands-of-components sums the backups
    produce.
    """
    k = w.shape[0]
    w = w.copy()
    m = m.copy()
    s = s.copy()
    costs_done = np.zeros(max(k - target, 0))
    if k <= target:
        return w, m, s, costs_done
    q = 1.0 / np.sqrt(4.0 * np.pi * s)
    nxt = np.empty(k, dtype=np.int64)
    prv = np.empty(k, dtype=np.int64)
    for i in range(k):
        nxt[i] = i + 1 if i + 1 < k else -1
        prv[i] = i - 1
    C = np.full((k, band), np.inf)
    N = np.full((k, band), -1, dtype=np.int64)
    oldC = np.empty(band)
    oldN = np.empty(band, dtype=np.int64)
    rowmin = np.full(k, np.inf)
    rowarg = np.full(k, -1)
    for r in range(k):
        b, a = _row_1d(r, nxt, w, m, s, q, band, C, N, r, oldC, oldN)
        rowmin[r] = b
        rowarg[r] = a
    alive = np.ones(k, dtype=np.bool_)
    count = k
    step = 0
    while count > target:
        best = np.inf
        i = -1
        for r in range(k):
            if rowmin[r] < best:
                best = rowmin[r]
                i = r
        if i < 0:
            break
        j = nxt[i]
        for _ in range(rowarg[i]):
            j = nxt[j]
        costs_done[step] = best
        step += 1
        wm = w[i] + w[j]
        a = w[i] / wm
        b = w[j] / wm
        d = m[i] - m[j]
        s[i] = a * s[i] + b * s[j] + a * b * d * d
        m[i] = a * m[i] + b * m[j]
        w[i] = wm
        q[i] = 1.0 / np.sqrt(4.0 * np.pi * s[i])
        # unlink j
        alive[j] = False
        rowmin[j] = np.inf
        pj, nj = prv[j], nxt[j]
        if pj >= 0:
            nxt[pj] = nj
        if nj >= 0:
            prv[nj] = pj
        count -= 1
        # rows whose forward window touched i or j: i..pj and band predecessors of i
        r = i
        while r >= 0:
            bb, aa = _row_1d(r, nxt, w, m, s, q, band, C, N, i, oldC, oldN)
            rowmin[r] = bb
            rowarg[r] = aa
            if r == pj:
                break
            r = nxt[r]
        r = prv[i]
        for _ in range(band):
            if r < 0:
                break
            bb, aa = _row_1d(r, nxt, w, m, s, q, band, C, N, i, oldC, oldN)
            rowmin[r] = bb
            rowarg[r] = aa
            r = prv[r]
    keep = np.flatnonzero(alive)
    return w[keep], m[keep], s[keep], costs_done[:step]
