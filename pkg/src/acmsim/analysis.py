"""Finite-horizon diagnostics for grown DAGs.

Confirmation, anchors, leaf growth, Foster drift at regenerations,
single-leaf hits, coupled-run equality and the rooted-ball metric.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, stats
from scipy.sparse.csgraph import shortest_path

from .constructions import AllLeaves, KLeaves, Mixture, Nakamoto, StateVarying
from .delays import DEFAULT_CENSOR_EPS, make_delay_model
from .engine import InitialGraph, ProcessState, run, run_trace
from .errors import HorizonTooLargeForExact, MalformedSpec, TooFewRegenerations, TraceMismatch
from .height import HeightSeries
from .timedelay import RegenerationReport, detect_regeneration_intervals, sample_trace

EXACT_HORIZON_LIMIT = 20_000

# Conventions for the phase sweep; they are choices, not derived constants.
DIVERGING_EXPONENT = 0.3
PHASE_ORDER = {"diverging-leaves": 0, "indeterminate": 1, "recurrent": 2}


def _map(fn, items, workers):
    items = list(items)
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- confirmation --------------------------------------------------------------------


def _reach_bitsets(state: ProcessState) -> list:
    """``reach[v]`` has bit ``u`` set iff ``v`` has a directed path to ``u`` (``u = v`` included)."""
    indptr = np.asarray(state.indptr[: state.n_vertices + 1], dtype=np.int64).tolist()
    targets = np.asarray(state.targets[: indptr[-1]], dtype=np.int64).tolist()
    reach = [0] * state.n_vertices
    for v in range(state.n_vertices):
        acc = 1 << v
        for u in targets[indptr[v] : indptr[v + 1]]:
            acc |= reach[u]
        reach[v] = acc
    return reach


def confirmed_exact_ids(state: ProcessState, margin: int, max_horizon: int = EXACT_HORIZON_LIMIT) -> set:
    """Ids ``v`` such that every vertex with mark in ``(mark(v), T - margin]`` reaches ``v``.

    When that range is empty the condition holds vacuously.
    """
    T = state.time
    if T > max_horizon:
        raise HorizonTooLargeForExact(f"T = {T} exceeds the exact-confirmation bound {max_horizon}")
    if not 0 <= margin < T:
        raise MalformedSpec(f"margin must lie in [0, T), got {margin}")
    reach = _reach_bitsets(state)
    last = T - margin
    out = {state.vertex_of_mark(m) for m in range(last, T + 1)}
    acc = -1  # all bits set
    for m in range(last, 0, -1):
        v = state.vertex_of_mark(m)
        if m < last and (acc >> v) & 1:
            out.add(v)
        acc &= reach[v]
    out.update(v for v in range(state.n0) if (acc >> v) & 1)
    return out


def _marks(state: ProcessState, ids) -> set:
    return {state.mark(v) for v in ids}


def anchor_events_nakamoto(height_series: HeightSeries, regen_report: RegenerationReport) -> np.ndarray:
    """Times ``t`` where ``X`` steps up and a long regeneration interval starts."""
    if len(height_series.X) - 1 != regen_report.horizon:
        raise TraceMismatch("height series and regeneration report cover different horizons")
    starts = regen_report.long_starts()
    if len(starts) == 0:
        return starts
    X = height_series.X
    return starts[X[starts] - X[starts - 1] == 1]


def cut_vertex_times(state: ProcessState, regen_report: RegenerationReport) -> np.ndarray:
    """Certified regeneration times with a single leaf (needs ``r = 1``)."""
    if regen_report.r != 1 or len(regen_report.times) == 0:
        return np.empty(0, np.int64)
    L = np.asarray(state.leaf_series)
    return regen_report.times[L[regen_report.times] == 1]


@dataclass
class ConfirmationReport:
    confirmed_exact: set
    confirmed_anchor: set
    margin: int
    horizon: int
    method: str = ""
    confirmed_ids: set = field(default_factory=set, repr=False)
    settled_ids: set = field(default_factory=set, repr=False)

    @property
    def settled(self) -> set:
        """Confirmed marks whose test range was non-empty."""
        return {m for m in self.confirmed_exact if m < self.horizon - self.margin}

    @property
    def contained(self) -> bool:
        return self.confirmed_anchor <= self.confirmed_exact

    def summary(self) -> dict:
        return {
            "horizon": self.horizon,
            "margin": self.margin,
            "anchor_method": self.method,
            "confirmed_exact": len(self.confirmed_exact),
            "confirmed_settled": len(self.settled),
            "confirmed_anchor": len(self.confirmed_anchor),
            "anchor_subset_of_exact": self.contained,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mark", "exact", "anchor"])
            for m in sorted(self.confirmed_exact | self.confirmed_anchor):
                writer.writerow([m, int(m in self.confirmed_exact), int(m in self.confirmed_anchor)])


def confirmation_report(state: ProcessState, trace, spec, margin: int | None = None,
                        censor_eps: float = DEFAULT_CENSOR_EPS, exact: bool = True) -> ConfirmationReport:
    """Exact confirmed set plus the regeneration-certified one.

    Nakamoto runs certify anchors. Leaf-choosing rules certify single-leaf
    regeneration times. Both need ``r = 1``; otherwise the certified set is empty.
    """
    model = trace.model
    report = detect_regeneration_intervals(trace, model, censor_eps)
    margin = report.censor_margin if margin is None else int(margin)
    if isinstance(spec, Nakamoto):
        from .height import height_recursion

        method = "anchor"
        hs = height_recursion(trace)
        certified = anchor_events_nakamoto(hs, report) if report.r == 1 else np.empty(0, np.int64)
    elif isinstance(spec, (KLeaves, AllLeaves, Mixture, StateVarying)):
        method = "cut-vertex"
        certified = cut_vertex_times(state, report)
    else:
        method = "none"
        certified = np.empty(0, np.int64)
    ids = confirmed_exact_ids(state, min(margin, state.time - 1)) if exact else set()
    return ConfirmationReport(
        confirmed_exact=_marks(state, ids) if exact else set(),
        confirmed_anchor={int(t) for t in certified},
        margin=margin,
        horizon=state.time,
        method=method,
        confirmed_ids=ids,
        settled_ids={v for v in ids if state.mark(v) < state.time - margin},
    )


# -- leaf growth -------------------------------------------------------------------------


@dataclass
class LeafGrowthReport:
    slope: float
    stderr: float
    ci: tuple
    times: np.ndarray
    mean_leaves: np.ndarray
    bound: np.ndarray
    bound_ok: bool
    degenerate: bool

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "slope_stderr": self.stderr,
            "slope_ci": list(self.ci),
            "bound_ok": self.bound_ok,
            "degenerate": self.degenerate,
        }


def log_grid(t_min: int, horizon: int, points: int = 60) -> np.ndarray:
    t_min = max(1, min(t_min, horizon))
    return np.unique(np.geomspace(t_min, horizon, points).astype(np.int64))


def fit_exponent(times: np.ndarray, values: np.ndarray):
    """Least-squares slope of ``log values`` on ``log times``."""
    values = np.asarray(values, dtype=np.float64)
    if np.ptp(values) == 0:
        return 0.0, 0.0, True
    fit = stats.linregress(np.log(times), np.log(values))
    return float(fit.slope), float(fit.stderr), False


def leaf_growth_exponent(model, horizon: int, replicas: int = 20, seed_base: int = 0,
                         spec=KLeaves(1), t_min: int = 1000, points: int = 60,
                         workers: int = 1) -> LeafGrowthReport:
    """Slope of ``log E L_t`` against ``log t`` and the second-moment bound on ``E L_t``."""
    model = make_delay_model(model)
    grid = log_grid(t_min, horizon, points)

    def one(seed):
        state, _ = run(model, spec, horizon, seed)
        return np.asarray(state.leaf_series, dtype=np.float64)

    series = _map(one, range(seed_base, seed_base + replicas), workers)
    L0 = series[0][0]
    mean = np.mean([s[grid] for s in series], axis=0)
    slope, se, degenerate = fit_exponent(grid, mean)
    c = 2.0 * model.excess_mean(1)
    bound = np.sqrt((2 * c + 1) * grid + L0**2)
    z = stats.t.ppf(0.975, max(len(grid) - 2, 1))
    return LeafGrowthReport(slope, se, (slope - z * se, slope + z * se), grid, mean, bound,
                            bool(np.all(mean <= bound)), degenerate)


# -- drift at regenerations --------------------------------------------------------------


def regeneration_levels(state: ProcessState, report: RegenerationReport) -> np.ndarray:
    """Lyapunov values at certified interval starts: ``L`` when ``r = 1``, else ``sum_{i<r} L_{t+i}``."""
    L = np.asarray(state.leaf_series, dtype=np.int64)
    t = report.times
    if report.r == 1:
        return L[t]
    t = t[t + report.r - 1 <= state.time]
    return np.add.reduce([L[t + i] for i in range(report.r)])


@dataclass
class DriftReport:
    levels: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    n_pairs: int
    _pairs: tuple = field(repr=False, default=(np.empty(0), np.empty(0)))

    def pooled(self, level_min: int, confidence: float = 0.95) -> dict:
        lv, d = self._pairs
        sel = d[lv >= level_min]
        n = len(sel)
        if n < 2:
            return {"level_min": level_min, "n": n, "mean": float("nan"), "ci": [float("nan")] * 2}
        mean = float(sel.mean())
        half = float(stats.t.ppf(0.5 + confidence / 2, n - 1) * sel.std(ddof=1) / np.sqrt(n))
        return {"level_min": level_min, "n": n, "mean": mean, "ci": [mean - half, mean + half]}

    def bands(self) -> list:
        """Dyadic bands ``[2^j, 2^{j+1})`` with pooled count and mean."""
        lv, d = self._pairs
        out = []
        if len(lv) == 0:
            return out
        for j in range(int(np.log2(max(lv.max(), 1))) + 1):
            sel = (lv >= 2**j) & (lv < 2 ** (j + 1))
            if sel.any():
                out.append({"lo": 2**j, "hi": 2 ** (j + 1), "n": int(sel.sum()), "mean": float(d[sel].mean())})
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level", "count", "mean_drift", "variance"])
            for row in zip(self.levels, self.counts, self.means, self.variances):
                writer.writerow([int(row[0]), int(row[1]), float(row[2]), float(row[3])])


def drift_pairs(state: ProcessState, report: RegenerationReport):
    v = regeneration_levels(state, report)
    return v[:-1], np.diff(v)


def drift_from_pairs(levels: np.ndarray, diffs: np.ndarray) -> DriftReport:
    levels = np.asarray(levels, dtype=np.int64)
    diffs = np.asarray(diffs, dtype=np.float64)
    if len(levels) == 0:
        raise TooFewRegenerations("no consecutive regeneration pairs")
    uniq, inv, counts = np.unique(levels, return_inverse=True, return_counts=True)
    sums = np.bincount(inv, diffs)
    means = sums / counts
    sq = np.bincount(inv, diffs**2)
    var = np.where(counts > 1, (sq - counts * means**2) / np.maximum(counts - 1, 1), 0.0)
    return DriftReport(uniq, counts, means, var, len(levels), (levels, diffs))


def foster_drift(model, spec, horizon: int, seeds=(0,), g0: InitialGraph | None = None,
                 censor_eps: float = DEFAULT_CENSOR_EPS, workers: int = 1) -> DriftReport:
    """Conditional one-step drift of the regeneration-time Lyapunov values, pooled over seeds.

    A large star ``g0`` lets the chain be observed at high levels it would
    rarely reach from a single root.
    """
    model = make_delay_model(model)

    def one(seed):
        state, trace = run(model, spec, horizon, seed, g0)
        return drift_pairs(state, detect_regeneration_intervals(trace, model, censor_eps))

    parts = _map(one, list(seeds), workers)
    return drift_from_pairs(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def single_leaf_hitting(state: ProcessState, report: RegenerationReport, after: int = 0) -> int:
    """Certified regeneration times ``t > after`` with ``L_t = 1``."""
    t = cut_vertex_times(state, report)
    return int(np.sum(t > after))


# -- coupled runs and the ball metric ------------------------------------------------------


def _as_graph(g):
    if isinstance(g, ProcessState):
        return g.n_vertices, g.edges()
    n, edges = g
    return int(n), np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def _root_distances(n: int, edges: np.ndarray, size: int) -> np.ndarray:
    adj = sparse.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    d = shortest_path(adj, directed=False, unweighted=True, indices=0)
    out = np.full(size, np.inf)
    out[:n] = d
    return out


def graph_distance(g1, g2) -> float:
    """``1 / (1 + s)`` with ``s`` the largest radius at which the undirected root balls agree.

    Graphs are ``ProcessState`` objects or ``(n_vertices, edges)`` pairs with
    vertex 0 as the root; labels are compared as given.
    """
    n1, e1 = _as_graph(g1)
    n2, e2 = _as_graph(g2)
    size = max(n1, n2)
    d1 = _root_distances(n1, e1, size)
    d2 = _root_distances(n2, e2, size)
    fail = np.inf
    diff = d1 != d2
    if diff.any():
        fail = np.minimum(d1[diff], d2[diff]).min()
    s1 = {tuple(e) for e in e1.tolist()}
    s2 = {tuple(e) for e in e2.tolist()}
    for a, b in s1 ^ s2:
        dd = d1 if (a, b) in s1 else d2
        fail = min(fail, max(dd[a], dd[b]))
    if np.isinf(fail):
        return 0.0
    return float(1.0 / fail)  # balls agree up to radius fail - 1


def equality_horizon(a: ProcessState, b: ProcessState) -> int:
    """Largest ``t`` with ``G_t(a) = G_t(b)`` as edge sets."""
    if a.n0 != b.n0 or a.g0 != b.g0:
        return -1
    T = min(a.time, b.time)
    ia = np.asarray(a.indptr[: a.n0 + T + 1], dtype=np.int64)
    ib = np.asarray(b.indptr[: b.n0 + T + 1], dtype=np.int64)
    da, db = np.diff(ia), np.diff(ib)
    bad = np.flatnonzero(da != db)
    first = int(bad[0]) if len(bad) else a.n0 + T
    # among vertices before ``first`` the edge arrays line up
    ne = int(ia[first])
    ta = np.asarray(a.targets[:ne], dtype=np.int64)
    tb = np.asarray(b.targets[:ne], dtype=np.int64)
    mism = np.flatnonzero(ta != tb)
    if len(mism):
        first = min(first, int(np.searchsorted(ia, mism[0], side="right")) - 1)
    if first >= a.n0 + T:
        return T
    return max(first - a.n0, 0)  # vertex with mark first-n0+1 is the first to differ


@dataclass
class CommutingReport:
    ks: list
    equality_horizons: list
    leaf_horizons: list
    distances: list
    horizon: int

    @property
    def horizon_ok(self) -> bool:
        return all(e >= l for e, l in zip(self.equality_horizons, self.leaf_horizons))

    @property
    def distance_monotone(self) -> bool:
        return all(x >= y for x, y in zip(self.distances, self.distances[1:]))

    @property
    def horizon_monotone(self) -> bool:
        return all(x <= y for x, y in zip(self.equality_horizons, self.equality_horizons[1:]))

    def summary(self) -> dict:
        return {
            "k": list(self.ks),
            "equality_horizon": list(self.equality_horizons),
            "leaf_bound_horizon": list(self.leaf_horizons),
            "distance": list(self.distances),
            "horizon_ok": self.horizon_ok,
            "distance_monotone": self.distance_monotone,
            "horizon_monotone": self.horizon_monotone,
        }


def commuting_check(model, horizon: int, seed: int, k_list, g0: InitialGraph | None = None) -> CommutingReport:
    """Run ``KLeaves(j)`` for each ``j`` and ``AllLeaves`` on one trace and compare."""
    trace = sample_trace(model, horizon, seed)
    full = run_trace(trace, AllLeaves(), g0)
    running_max = np.maximum.accumulate(np.asarray(full.leaf_series))
    ks = sorted(int(k) for k in k_list)
    eq, lh, dist = [], [], []
    for k in ks:
        st = run_trace(trace, KLeaves(k), g0)
        eq.append(equality_horizon(st, full))
        lh.append(int(np.sum(running_max <= k)) - 1)
        dist.append(graph_distance(st, full))
    return CommutingReport(ks, eq, lh, dist, horizon)


# -- phase sweep -------------------------------------------------------------------------


def classify_phase(exponent: float, late_hits: int) -> str:
    if exponent > DIVERGING_EXPONENT and late_hits == 0:
        return "diverging-leaves"
    if late_hits > 0 and exponent <= DIVERGING_EXPONENT:
        return "recurrent"
    return "indeterminate"


@dataclass
class PhasePoint:
    alpha: float
    seed: int
    exponent: float
    late_hits: int
    final_leaves: int
    label: str


@dataclass
class PhaseSweep:
    alphas: list
    seeds: list
    points: list  # points[i][j]: seed i, alpha j

    def labels(self, i: int) -> list:
        return [p.label for p in self.points[i]]

    def monotone(self, i: int) -> bool:
        ranks = [PHASE_ORDER[x] for x in self.labels(i)]
        return all(a <= b for a, b in zip(ranks, ranks[1:]))

    def transition_window(self, i: int):
        """Largest alpha labelled diverging and smallest labelled recurrent for battery ``i``."""
        lab = self.labels(i)
        div = [a for a, x in zip(self.alphas, lab) if x == "diverging-leaves"]
        rec = [a for a, x in zip(self.alphas, lab) if x == "recurrent"]
        return (max(div) if div else None, min(rec) if rec else None)

    def summary(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "classification_rule": (
                f"diverging-leaves: exponent > {DIVERGING_EXPONENT} and no late single-leaf hit; "
                f"recurrent: late hit and exponent <= {DIVERGING_EXPONENT} (artifact convention)"
            ),
            "batteries": [
                {
                    "seed": s,
                    "labels": self.labels(i),
                    "exponents": [p.exponent for p in self.points[i]],
                    "late_hits": [p.late_hits for p in self.points[i]],
                    "monotone": self.monotone(i),
                    "window": list(self.transition_window(i)),
                }
                for i, s in enumerate(self.seeds)
            ],
        }


def phase_transition_sweep(model, k: int, alpha_grid, horizon: int, seeds=(0,),
                           t_min: int = 1000, workers: int = 1) -> PhaseSweep:
    """Leaf exponent and late single-leaf hits of ``StateVarying(k, alpha)`` per alpha and seed.

    Hits are counted in the second half of the run so that the start-up phase,
    when every rule has few leaves, does not count as recurrence.
    """
    model = make_delay_model(model)
    alphas = sorted(float(a) for a in alpha_grid)
    grid = log_grid(t_min, horizon)

    def one(job):
        seed, alpha = job
        spec = StateVarying(k, alpha) if alpha > 0 else KLeaves(1)
        state, trace = run(model, spec, horizon, seed)
        L = np.asarray(state.leaf_series)
        slope, _, _ = fit_exponent(grid, L[grid])
        hits = single_leaf_hitting(state, detect_regeneration_intervals(trace, model), after=horizon // 2)
        return PhasePoint(alpha, seed, slope, hits, int(L[-1]), classify_phase(slope, hits))

    seeds = list(seeds)
    flat = _map(one, [(s, a) for s in seeds for a in alphas], workers)
    points = [flat[i * len(alphas) : (i + 1) * len(alphas)] for i in range(len(seeds))]
    return PhaseSweep(alphas, seeds, points)


# -- export ------------------------------------------------------------------------------


def write_dot(state: ProcessState, path, confirmed=(), anchors=()) -> None:
    """DOT digraph with edges ``new -> old``; confirmed and anchor vertices are tagged."""
    confirmed = set(confirmed)
    anchors = set(anchors)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("digraph G {\n  rankdir=RL;\n  node [shape=circle, label=\"\"];\n")
        for v in range(state.n_vertices):
            attrs = [f'mark="{state.mark(v)}"']
            if v in confirmed:
                attrs += ['confirmed="true"', 'style="filled"', 'fillcolor="blue"']
            if v in anchors:
                attrs += ['anchor="true"', 'color="red"']
            fh.write(f"  v{v} [{', '.join(attrs)}];\n")
        for u, w in state.edges():
            fh.write(f"  v{u} -> v{w};\n")
        fh.write("}\n")


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(f"not JSON serialisable: {type(x)}")
