"""Compiled ACM run loop.

Mirrors :func:`acmsim.engine.step` draw for draw so that a seed yields the
same graph on either backend; ``tests/test_engine.py`` checks this.
"""

import math

import numba
import numpy as np

from ._rng import counter_uniform, randbelow
from .constructions import AllLeaves, KLeaves, Mixture, Nakamoto, StateVarying, TwoEndedExample
from .errors import MalformedSpec

NEVER = np.iinfo(np.int64).max

NAK, KLEAF, ALL, MIX, SV, TWO = range(6)


def encode_spec(spec):
    """Flatten a construction spec into the kernel's scalar/array parameters."""
    comp_kind = np.zeros(1, np.int64)
    comp_k = np.zeros(1, np.int64)
    comp_cum = np.ones(1, np.float64)
    if isinstance(spec, Nakamoto):
        return NAK, 0, 0.0, comp_kind, comp_k, comp_cum
    if isinstance(spec, TwoEndedExample):
        return TWO, 0, 0.0, comp_kind, comp_k, comp_cum
    if isinstance(spec, KLeaves):
        return KLEAF, int(spec.k), 0.0, comp_kind, comp_k, comp_cum
    if isinstance(spec, AllLeaves):
        return ALL, 0, 0.0, comp_kind, comp_k, comp_cum
    if isinstance(spec, StateVarying):
        return SV, int(spec.k), float(spec.alpha), comp_kind, comp_k, comp_cum
    if isinstance(spec, Mixture):
        kinds = np.array([KLEAF if isinstance(s, KLeaves) else ALL for s, _ in spec.components])
        ks = np.array([s.k if isinstance(s, KLeaves) else 0 for s, _ in spec.components])
        return MIX, 0, 0.0, kinds.astype(np.int64), ks.astype(np.int64), np.array(spec.cumulative())
    raise MalformedSpec(f"unsupported construction {spec!r}")


@numba.njit(cache=True, nogil=True)
def _fen_add(tree, n, i, delta):
    i += 1
    while i <= n:
        tree[i] += delta
        i += i & -i


@numba.njit(cache=True, nogil=True)
def _fen_prefix(tree, n, i):
    if i >= n:
        i = n - 1
    i += 1
    s = 0
    while i > 0:
        s += tree[i]
        i -= i & -i
    return s


@numba.njit(cache=True, nogil=True)
def _fen_kth(tree, n, top, j):
    pos = 0
    rem = j + 1
    step = top
    while step:
        nxt = pos + step
        if nxt <= n and tree[nxt] < rem:
            pos = nxt
            rem -= tree[nxt]
        step >>= 1
    return pos


@numba.njit(cache=True, nogil=True)
def _merged_kth(tree, n, top, recent, nrec, j):
    for i in range(nrec):
        e = recent[i]
        pos = _fen_prefix(tree, n, e - 1) + i if e > 0 else i
        if pos == j:
            return e
        if pos > j:
            return _fen_kth(tree, n, top, j - i)
    return _fen_kth(tree, n, top, j - nrec)


@numba.njit(cache=True, nogil=True)
def _insertion_sort(a, n):
    for i in range(1, n):
        x = a[i]
        j = i - 1
        while j >= 0 and a[j] > x:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = x


@numba.njit(cache=True, nogil=True)
def run_kernel(n0, g0_indptr, g0_targets, g0_cover, g0_depth, xi, seed,
               kind, k, alpha, comp_kind, comp_k, comp_cum):
    T = xi.shape[0]
    N = n0 + T
    indptr = np.empty(N + 1, np.int64)
    cap = max(2 * N, g0_targets.shape[0] + 16)
    targets = np.empty(cap, np.int64)
    ne = g0_targets.shape[0]
    targets[:ne] = g0_targets
    indptr[: n0 + 1] = g0_indptr
    cover = np.full(N, NEVER, np.int64)
    depth = np.zeros(N, np.int64)
    tree = np.zeros(N + 1, np.int64)
    top = 1
    while top * 2 <= N:
        top *= 2
    prev_same = np.full(N, -1, np.int64)
    last_at = np.full(N + 1, -1, np.int64)
    rank = np.zeros(N, np.int64)
    L = np.empty(T + 1, np.int64)
    X = np.empty(T + 1, np.int64)
    recent = np.empty(N, np.int64)
    sel = np.empty(N, np.int64)
    idx = np.empty(N, np.int64)

    leaves = 0
    xmax = 0
    for v in range(n0):
        cover[v] = g0_cover[v]
        d = g0_depth[v]
        depth[v] = d
        if cover[v] == NEVER:
            _fen_add(tree, N, v, 1)
            leaves += 1
        prev_same[v] = last_at[d]
        rank[v] = rank[last_at[d]] + 1 if last_at[d] >= 0 else 1
        last_at[d] = v
        if d > xmax:
            xmax = d
    L[0] = leaves
    X[0] = xmax

    for t in range(1, T + 1):
        s = t - xi[t - 1]
        if s < 0:
            s = 0
        last_id = n0 - 1 + s
        v = n0 + t - 1
        draw = 0
        nsel = 0
        if kind == NAK:
            w = last_at[X[s]]
            while w > last_id:
                w = prev_same[w]
            cnt = rank[w]
            draw += 1
            j = randbelow(counter_uniform(seed, t, draw), cnt)
            for _ in range(cnt - 1 - j):
                w = prev_same[w]
            sel[0] = w
            nsel = 1
        elif kind == TWO:
            m = s - 1 if s >= 1 else 0
            sel[0] = 0 if m == 0 else n0 + m - 1
            nsel = 1
        else:
            nrec = 0
            for c in range(s + 1, t):
                vc = n0 + c - 1
                for e in range(indptr[vc], indptr[vc + 1]):
                    u = targets[e]
                    if cover[u] == c and u <= last_id:
                        recent[nrec] = u
                        nrec += 1
            _insertion_sort(recent, nrec)
            l = _fen_prefix(tree, N, last_id) + nrec
            if kind == KLEAF:
                kk = k
            elif kind == ALL:
                kk = l
            elif kind == MIX:
                draw += 1
                u01 = counter_uniform(seed, t, draw)
                ci = comp_cum.shape[0] - 1
                for i in range(comp_cum.shape[0]):
                    if u01 < comp_cum[i]:
                        ci = i
                        break
                kk = comp_k[ci] if comp_kind[ci] == KLEAF else l
            else:
                draw += 1
                u01 = counter_uniform(seed, t, draw)
                p = alpha / math.sqrt(l)
                if p > 1.0:
                    p = 1.0
                kk = k if u01 < p else 1
            if l <= kk:
                for j in range(l):
                    sel[j] = _merged_kth(tree, N, top, recent, nrec, j)
                nsel = l
            else:
                n = 0
                for j in range(l - kk, l):
                    draw += 1
                    x = randbelow(counter_uniform(seed, t, draw), j + 1)
                    seen = False
                    for q in range(n):
                        if idx[q] == x:
                            seen = True
                            break
                    idx[n] = j if seen else x
                    n += 1
                _insertion_sort(idx, n)
                for q in range(n):
                    sel[q] = _merged_kth(tree, N, top, recent, nrec, idx[q])
                nsel = n

        if ne + nsel > targets.shape[0]:
            bigger = np.empty(2 * targets.shape[0] + nsel, np.int64)
            bigger[:ne] = targets[:ne]
            targets = bigger
        dv = 0
        covered = 0
        for q in range(nsel):
            u = sel[q]
            targets[ne + q] = u
            if depth[u] + 1 > dv:
                dv = depth[u] + 1
            if cover[u] == NEVER:
                cover[u] = t
                _fen_add(tree, N, u, -1)
                covered += 1
        ne += nsel
        indptr[v + 1] = ne
        depth[v] = dv
        _fen_add(tree, N, v, 1)
        prev_same[v] = last_at[dv]
        rank[v] = rank[last_at[dv]] + 1 if last_at[dv] >= 0 else 1
        last_at[dv] = v
        leaves += 1 - covered
        L[t] = leaves
        if dv > xmax:
            xmax = dv
        X[t] = xmax

    return indptr, targets[:ne].copy(), cover, depth, L, X
