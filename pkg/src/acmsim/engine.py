"""The growing marked DAG and its retrospective snapshots.

Vertex ids are dense integers: the ``n0`` vertices of the initial graph take
ids ``0..n0-1`` (all marked 0, id 0 is the root) and the vertex created at time
``t`` takes id ``n0 + t - 1``. Id order is therefore mark order.

Leaf membership of any past graph ``G_s`` follows from one number per vertex:
``v`` is a leaf of ``G_s`` iff ``mark(v) <= s < cover_time(v)``, where
``cover_time`` is the first time ``v`` gained an in-neighbour. A Fenwick tree
over the current leaves plus the few vertices covered after ``s`` answers
count and j-th-leaf queries on ``G_s`` in logarithmic time.
"""

from __future__ import annotations

import bisect
import csv
import graphlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constructions import ConstructionSpec, parse_construction, select
from .errors import FutureSnapshot, MalformedInitialGraph, MalformedSpec

NEVER = np.iinfo(np.int64).max
_RECENT_WINDOW = 256


class Fenwick:
    """Order-statistics index over ``0..n-1`` holding 0/1 counts."""

    __slots__ = ("n", "tree", "_top")

    def __init__(self, n: int, values=None):
        self.n = n
        tree = [0] * (n + 1)
        if values is not None:
            for i, v in enumerate(values):
                tree[i + 1] += int(v)
            for i in range(1, n + 1):
                j = i + (i & -i)
                if j <= n:
                    tree[j] += tree[i]
        self.tree = tree
        self._top = 1 << (n.bit_length() - 1) if n else 0

    def add(self, i: int, delta: int) -> None:
        i += 1
        tree, n = self.tree, self.n
        while i <= n:
            tree[i] += delta
            i += i & -i

    def prefix(self, i: int) -> int:
        """Sum over positions ``0..i``."""
        i = min(i, self.n - 1) + 1
        s, tree = 0, self.tree
        while i > 0:
            s += tree[i]
            i -= i & -i
        return s

    def kth(self, j: int) -> int:
        """Position of the ``j``-th (0-based) set element."""
        pos, rem, step, tree = 0, j + 1, self._top, self.tree
        while step:
            nxt = pos + step
            if nxt <= self.n and tree[nxt] < rem:
                pos = nxt
                rem -= tree[nxt]
            step >>= 1
        return pos

    def grow(self, n: int) -> "Fenwick":
        values = [self.prefix(i) - (self.prefix(i - 1) if i else 0) for i in range(self.n)]
        return Fenwick(n, values + [0] * (n - self.n))


@dataclass(frozen=True)
class InitialGraph:
    """A finite rooted DAG whose vertices are all marked 0; id 0 is the root."""

    n_vertices: int = 1
    edges: tuple = ()

    @classmethod
    def star(cls, n_leaves: int) -> "InitialGraph":
        return cls(n_leaves + 1, tuple((i, 0) for i in range(1, n_leaves + 1)))


def _initial_structure(g0: InitialGraph):
    n = g0.n_vertices
    if int(n) != n or n < 1:
        raise MalformedInitialGraph("initial graph needs at least the root")
    out: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for u, v in g0.edges:
        if not (0 <= u < n and 0 <= v < n) or u == v:
            raise MalformedInitialGraph(f"bad edge {(u, v)}")
        if v in out[u]:
            raise MalformedInitialGraph(f"duplicate edge {(u, v)}")
        out[u].append(v)
        indeg[v] += 1
    if out[0]:
        raise MalformedInitialGraph("the root must have out-degree 0")
    if any(not out[v] for v in range(1, n)):
        raise MalformedInitialGraph("every non-root vertex needs an out-edge")
    try:
        order = list(graphlib.TopologicalSorter({v: out[v] for v in range(n)}).static_order())
    except graphlib.CycleError as exc:
        raise MalformedInitialGraph("initial graph has a cycle") from exc
    depth = [0] * n
    for v in order:  # targets come first
        if out[v]:
            depth[v] = 1 + max(depth[u] for u in out[v])
    out = [sorted(x) for x in out]
    cover = [0 if indeg[v] else NEVER for v in range(n)]
    return out, cover, depth


class ProcessState:
    """Vertices, edges, cover times and depths of ``G_0 .. G_t``."""

    def __init__(self, g0: Optional[InitialGraph] = None, capacity: int = 1024):
        g0 = g0 or InitialGraph()
        out, cover, depth = _initial_structure(g0)
        self.n0 = g0.n_vertices
        self.g0 = g0
        self.time = 0
        self.indptr = [0]
        self.targets: list = []
        for ts in out:
            self.targets.extend(ts)
            self.indptr.append(len(self.targets))
        self.cover = list(cover)
        self.depth = list(depth)
        leaf0 = sum(c == NEVER for c in cover)
        self.leaf_series = [leaf0]
        self.max_depth_series = [max(depth)]
        self._fen = Fenwick(max(capacity, self.n0), [c == NEVER for c in cover])
        self._by_depth: Optional[dict] = None

    # -- construction from kernel output -------------------------------------------

    @classmethod
    def from_arrays(cls, g0, indptr, targets, cover, depth, leaf_series, max_depth_series):
        self = cls.__new__(cls)
        self.g0 = g0
        self.n0 = g0.n_vertices
        self.indptr = indptr
        self.targets = targets
        self.cover = cover
        self.depth = depth
        self.leaf_series = leaf_series
        self.max_depth_series = max_depth_series
        self.time = len(leaf_series) - 1
        self._fen = None
        self._by_depth = None
        return self

    # -- basic queries --------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.n0 + self.time

    def mark(self, v: int) -> int:
        return 0 if v < self.n0 else v - self.n0 + 1

    def vertex_of_mark(self, m: int) -> int:
        return 0 if m <= 0 else self.n0 + m - 1

    def out_targets(self, v: int):
        return self.targets[self.indptr[v] : self.indptr[v + 1]]

    def edges(self) -> np.ndarray:
        """``(E, 2)`` array of ``(src_id, dst_id)``, grouped by source id."""
        indptr = np.asarray(self.indptr, dtype=np.int64)
        src = np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr))
        return np.column_stack([src, np.asarray(self.targets[: indptr[-1]], dtype=np.int64)])

    def leaves_at(self, s: int) -> np.ndarray:
        """Sorted leaf ids of ``G_s`` from cover times (vectorised)."""
        self._check_time(s)
        last = self.n0 + s
        cover = np.asarray(self.cover[:last], dtype=np.int64)
        return np.flatnonzero(cover > s)

    def snapshot(self, s: int) -> "SnapshotView":
        self._check_time(s)
        return SnapshotView(self, s)

    def _check_time(self, s: int) -> None:
        if s < 0 or s > self.time:
            raise FutureSnapshot(f"snapshot {s} outside [0, {self.time}]")

    @property
    def by_depth(self) -> dict:
        if self._by_depth is None:
            groups: dict = {}
            for v, d in enumerate(self.depth[: self.n_vertices]):
                groups.setdefault(int(d), []).append(v)
            self._by_depth = groups
        return self._by_depth

    def fenwick(self) -> Fenwick:
        if self._fen is None:
            self._fen = Fenwick(self.n_vertices, np.asarray(self.cover[: self.n_vertices]) == NEVER)
        return self._fen

    # -- exports --------------------------------------------------------------------

    def write_edge_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mark_src", "mark_dst"])
            for u, v in self.edges():
                writer.writerow([self.mark(int(u)), self.mark(int(v))])

    def write_series_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "L_t", "max_depth"])
            for t, (l, d) in enumerate(zip(self.leaf_series, self.max_depth_series)):
                writer.writerow([t, int(l), int(d)])


class SnapshotView:
    """Read-only view of ``G_s`` inside a (possibly still growing) state."""

    __slots__ = ("state", "time", "last_id", "_recent", "_cnt1", "_dense")

    def __init__(self, state: ProcessState, s: int):
        self.state = state
        self.time = s
        self.last_id = state.n0 - 1 + s
        self._dense = None
        self._recent = None
        if state.time - s > _RECENT_WINDOW:
            self._dense = state.leaves_at(s)
        else:
            fen = state.fenwick()
            recent = []
            cover, n0 = state.cover, state.n0
            for c in range(s + 1, state.time + 1):
                for v in state.out_targets(n0 + c - 1):
                    if cover[v] == c and v <= self.last_id:
                        recent.append(v)
            recent.sort()
            self._recent = recent
            self._cnt1 = fen.prefix(self.last_id)

    @property
    def leaf_count(self) -> int:
        if self._dense is not None:
            return len(self._dense)
        return self._cnt1 + len(self._recent)

    def leaf_at(self, j: int) -> int:
        if self._dense is not None:
            return int(self._dense[j])
        fen = self.state.fenwick()
        for i, e in enumerate(self._recent):
            pos = fen.prefix(e - 1) + i if e > 0 else i
            if pos == j:
                return e
            if pos > j:
                return fen.kth(j - i)
        return fen.kth(j - len(self._recent))

    def leaves(self) -> list:
        if self._dense is not None:
            return [int(v) for v in self._dense]
        return [self.leaf_at(j) for j in range(self.leaf_count)]

    def _tops(self) -> list:
        d = int(self.state.max_depth_series[self.time])
        group = self.state.by_depth.get(d, [])
        return group[: bisect.bisect_right(group, self.last_id)]

    @property
    def max_depth_count(self) -> int:
        return len(self._tops())

    def max_depth_at(self, j: int) -> int:
        return self._tops()[j]

    def max_depth_vertices(self) -> list:
        return list(self._tops())

    def vertex_with_mark(self, mark: int) -> int:
        return self.state.vertex_of_mark(mark)


def init(g0: Optional[InitialGraph] = None, capacity: int = 1024) -> ProcessState:
    """Fresh process at time 0 from ``g0`` (default: the single root)."""
    return ProcessState(g0, capacity)


def step(state: ProcessState, t: int, xi_t: int, spec: ConstructionSpec, theta) -> ProcessState:
    """Add vertex ``t`` attached to ``select(spec, G_{(t - xi_t)_+}, theta)``."""
    if t != state.time + 1:
        raise MalformedSpec(f"state is at time {state.time}; cannot apply step {t}")
    if xi_t < 1:
        raise MalformedSpec("delays must be >= 1")
    snap = SnapshotView(state, max(t - xi_t, 0))
    chosen = sorted(select(spec, snap, theta))
    v = state.n0 + t - 1
    if v >= state._fen.n:
        state._fen = state._fen.grow(2 * state._fen.n)
    state.targets.extend(chosen)
    state.indptr.append(len(state.targets))
    dv = 1 + max(state.depth[u] for u in chosen)
    state.depth.append(dv)
    state.cover.append(NEVER)
    covered = 0
    for u in chosen:
        if state.cover[u] == NEVER:
            state.cover[u] = t
            state._fen.add(u, -1)
            covered += 1
    state._fen.add(v, 1)
    state.time = t
    state.leaf_series.append(state.leaf_series[-1] + 1 - covered)
    state.max_depth_series.append(max(state.max_depth_series[-1], dv))
    if state._by_depth is not None:
        state._by_depth.setdefault(dv, []).append(v)
    return state


def _g0_arrays(g0: InitialGraph):
    out, cover, depth = _initial_structure(g0)
    indptr = np.zeros(len(out) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(x) for x in out])
    flat = np.array([u for x in out for u in x], dtype=np.int64)
    return indptr, flat, np.array(cover, dtype=np.int64), np.array(depth, dtype=np.int64)


def run_trace(trace, spec: ConstructionSpec, g0: Optional[InitialGraph] = None,
              backend: str = "numba") -> ProcessState:
    """Grow ``G_0..G_T`` along a fixed trace.

    ``backend="python"`` composes :func:`step` and :func:`select` literally;
    ``backend="numba"`` runs the compiled loop. Both give identical graphs.
    """
    g0 = g0 or InitialGraph()
    if isinstance(spec, str):
        spec = parse_construction(spec)
    if backend == "python":
        state = init(g0, capacity=g0.n_vertices + trace.horizon)
        for t in range(1, trace.horizon + 1):
            step(state, t, int(trace.xi[t - 1]), spec, trace.theta(t))
        state.trace = trace
        return state
    if backend != "numba":
        raise MalformedSpec(f"unknown backend {backend!r}")
    from ._kernels import encode_spec, run_kernel
    from ._rng import as_seed

    indptr, flat, cover, depth = _g0_arrays(g0)
    out = run_kernel(g0.n_vertices, indptr, flat, cover, depth,
                     np.ascontiguousarray(trace.xi, dtype=np.int64), as_seed(trace.seed),
                     *encode_spec(spec))
    state = ProcessState.from_arrays(g0, *out)
    state.trace = trace
    return state


def run(model, spec: ConstructionSpec, horizon: int, seed: int,
        g0: Optional[InitialGraph] = None, backend: str = "numba"):
    """Sample a trace and grow the DAG along it; returns ``(state, trace)``."""
    from .timedelay import sample_trace

    trace = sample_trace(model, horizon, seed)
    return run_trace(trace, spec, g0, backend), trace
