import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acmsim.constructions import (
    AllLeaves,
    KLeaves,
    Mixture,
    Nakamoto,
    StateVarying,
    TwoEndedExample,
    describe,
)
from acmsim.engine import Fenwick, InitialGraph, ProcessState, init, run, run_trace, step
from acmsim.errors import FutureSnapshot, MalformedInitialGraph
from acmsim.timedelay import sample_trace, trace_from_xi

ALL_SPECS = [
    Nakamoto(),
    KLeaves(1),
    KLeaves(2),
    KLeaves(5),
    AllLeaves(),
    Mixture(((KLeaves(1), 0.9), (KLeaves(2), 0.1))),
    StateVarying(2, 1.0),
    TwoEndedExample(),
]


def graph_of(state):
    return {
        "edges": state.edges().tolist(),
        "L": list(map(int, state.leaf_series)),
        "X": list(map(int, state.max_depth_series)),
        "cover": list(map(int, state.cover[: state.n_vertices])),
        "depth": list(map(int, state.depth[: state.n_vertices])),
    }


# -- initial graphs ------------------------------------------------------------------------


def test_default_init():
    s = init()
    assert s.n_vertices == 1 and s.leaf_series == [1] and s.max_depth_series == [0]


def test_star_init():
    s = init(InitialGraph.star(2))
    assert s.leaf_series[0] == 2
    assert sorted(s.snapshot(0).leaves()) == [1, 2]
    assert s.snapshot(0).max_depth_vertices() == [1, 2]


@pytest.mark.parametrize(
    "g0",
    [
        InitialGraph(3, ((1, 2), (2, 1))),
        InitialGraph(2, ()),
        InitialGraph(2, ((0, 1), (1, 0))),
        InitialGraph(2, ((1, 0), (1, 0))),
        InitialGraph(0, ()),
        InitialGraph(2, ((1, 5),)),
    ],
)
def test_malformed_initial_graph(g0):
    with pytest.raises(MalformedInitialGraph):
        init(g0)


# -- single steps --------------------------------------------------------------------------


def test_step_examples():
    s = init()
    tr = trace_from_xi([1, 2])
    step(s, 1, 1, AllLeaves(), tr.theta(1))
    assert s.out_targets(1) == [0] and s.leaf_series[1] == 1 and s.cover[0] == 1

    s = run_trace(trace_from_xi([1, 2]), KLeaves(1), backend="python")
    assert list(s.out_targets(2)) == [0]
    assert s.leaf_series == [1, 1, 2]
    assert s.snapshot(1).leaves() == [1]
    assert s.snapshot(0).leaves() == [0]
    assert s.snapshot(0).max_depth_vertices() == [0]

    s = run_trace(trace_from_xi([1]), Nakamoto(), backend="python")
    assert list(s.out_targets(1)) == [0] and s.depth[1] == 1


def test_future_snapshot():
    s, _ = run("det:1", KLeaves(1), 5, 0)
    with pytest.raises(FutureSnapshot):
        s.snapshot(6)
    with pytest.raises(FutureSnapshot):
        s.leaves_at(-1)


def test_synchronous_runs():
    s, _ = run("det:1", Nakamoto(), 100, 0)
    assert list(s.max_depth_series) == list(range(101))
    s, _ = run("det:1", AllLeaves(), 10, 0)
    assert list(s.leaf_series) == [1] * 11
    assert [list(s.out_targets(v)) for v in range(1, 11)] == [[v - 1] for v in range(1, 11)]


def test_run_deterministic():
    a, _ = run("geometric:0.75", KLeaves(2), 1000, 7)
    b, _ = run("geometric:0.75", KLeaves(2), 1000, 7)
    assert graph_of(a) == graph_of(b)


# -- backends ------------------------------------------------------------------------------


@pytest.mark.parametrize("spec", ALL_SPECS, ids=describe)
@pytest.mark.parametrize("g0", [None, InitialGraph.star(3)], ids=["root", "star3"])
def test_backends_agree(spec, g0):
    tr = sample_trace("geometric:0.5", 1500, 11)
    assert graph_of(run_trace(tr, spec, g0, backend="python")) == graph_of(run_trace(tr, spec, g0, backend="numba"))


# -- invariants ----------------------------------------------------------------------------


def check_invariants(state: ProcessState, spec):
    n = state.n_vertices
    E = state.edges()
    assert np.all(E[:, 0] > E[:, 1])  # acyclic by marks
    outdeg = np.bincount(E[:, 0], minlength=n)
    assert outdeg[0] == 0 and np.all(outdeg[1:] >= 1)
    if isinstance(spec, (Nakamoto, TwoEndedExample)):
        assert np.all(outdeg[state.n0 :] == 1)
    assert len({tuple(e) for e in E.tolist()}) == len(E)
    L = np.asarray(state.leaf_series)
    assert L.min() >= 1
    dL = np.diff(L)
    assert dL.max() <= 1
    if spec == KLeaves(1):
        assert dL.min() >= 0
    depth = np.asarray(state.depth[:n])
    for v in range(state.n0, n):
        assert depth[v] == 1 + max(depth[u] for u in state.out_targets(v))
    X = np.asarray(state.max_depth_series)
    assert np.array_equal(X, np.maximum.accumulate(depth)[state.n0 - 1 :])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(ALL_SPECS), st.sampled_from(["geometric:0.5", "det:2", "finite:1=0.5,3=0.5"]))
def test_invariants(seed, spec, delay):
    state, _ = run(delay, spec, 400, seed)
    check_invariants(state, spec)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(ALL_SPECS[1:5]))
def test_snapshot_consistency(seed, spec):
    tr = sample_trace("geometric:0.5", 300, seed)
    state = init(capacity=tr.horizon + 1)
    online = [sorted(state.snapshot(0).leaves())]
    for t in range(1, tr.horizon + 1):
        step(state, t, int(tr.xi[t - 1]), spec, tr.theta(t))
        online.append(sorted(state.snapshot(t).leaves()))
    final = run_trace(tr, spec)
    for s in range(tr.horizon + 1):
        assert final.leaves_at(s).tolist() == online[s]
        view = final.snapshot(s)
        assert sorted(view.leaves()) == online[s]
        assert [view.leaf_at(j) for j in range(view.leaf_count)] == online[s]


def test_monotone_growth():
    state, _ = run("geometric:0.5", KLeaves(2), 300, 1)
    E = state.edges()
    for t in range(1, 301):
        prefix = E[E[:, 0] < state.n0 + t - 1]
        assert len(prefix) == state.indptr[state.n0 + t - 1]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([2, 3, 4, 8]))
def test_coupling_with_all_leaves(seed, j):
    tr = sample_trace("geometric:0.75", 600, seed)
    full = run_trace(tr, AllLeaves())
    fj = run_trace(tr, KLeaves(j))
    run_max = np.maximum.accumulate(full.leaf_series)
    T = int(np.sum(run_max <= j)) - 1
    n = full.n0 + T
    assert full.edges()[full.edges()[:, 0] < n].tolist() == fj.edges()[fj.edges()[:, 0] < n].tolist()


# -- Fenwick -------------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=200))
def test_fenwick_kth(bits):
    f = Fenwick(len(bits), bits)
    ones = [i for i, b in enumerate(bits) if b]
    for j, pos in enumerate(ones):
        assert f.kth(j) == pos
    for i in range(len(bits)):
        assert f.prefix(i) == sum(bits[: i + 1])


# -- exports -------------------------------------------------------------------------------


def test_csv_exports(tmp_path):
    state, _ = run("geometric:0.5", KLeaves(2), 50, 3)
    state.write_edge_csv(tmp_path / "e.csv")
    state.write_series_csv(tmp_path / "s.csv")
    e = (tmp_path / "e.csv").read_text().splitlines()
    s = (tmp_path / "s.csv").read_text().splitlines()
    assert e[0] == "mark_src,mark_dst" and len(e) == len(state.edges()) + 1
    assert s[0] == "t,L_t,max_depth" and len(s) == 52
