from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from acmsim._rng import ThetaStream
from acmsim.constructions import (
    AllLeaves,
    KLeaves,
    Mixture,
    Nakamoto,
    StateVarying,
    StaticSnapshot,
    TwoEndedExample,
    describe,
    floyd_sample,
    parse_construction,
    select,
    selection_distribution,
)
from acmsim.errors import EmptySnapshot, MalformedSpec, TooLargeToEnumerate


@pytest.mark.parametrize(
    "text, spec",
    [
        ("nakamoto", Nakamoto()),
        ("k:3", KLeaves(3)),
        ("f2", KLeaves(2)),
        ("all", AllLeaves()),
        ("mixture:1=0.9,2=0.1", Mixture(((KLeaves(1), 0.9), (KLeaves(2), 0.1)))),
        ("mixture:1=0.5,inf=0.5", Mixture(((KLeaves(1), 0.5), (AllLeaves(), 0.5)))),
        ("state-varying:2:1.5", StateVarying(2, 1.5)),
        ("two-ended", TwoEndedExample()),
    ],
)
def test_parse_and_describe_roundtrip(text, spec):
    assert parse_construction(text) == spec
    assert parse_construction(describe(spec)) == spec


@pytest.mark.parametrize("text", ["k:0", "k:x", "mixture:1=0.5", "mixture:1", "state-varying:1:2",
                                  "state-varying:2:-1", "bogus"])
def test_parse_errors(text):
    with pytest.raises(MalformedSpec):
        parse_construction(text)


def test_select_examples():
    snap = StaticSnapshot(7, (4, 7), (7,))
    assert select(KLeaves(2), snap, ThetaStream(0, 1)) == {4, 7}
    root = StaticSnapshot(0, (0,), (0,))
    assert select(AllLeaves(), root, ThetaStream(0, 1)) == {0}
    assert select(TwoEndedExample(), StaticSnapshot(2, (2,), (2,)), ThetaStream(0, 1)) == {1}
    assert select(TwoEndedExample(), root, ThetaStream(0, 1)) == {0}


def test_empty_snapshot():
    with pytest.raises(EmptySnapshot):
        select(KLeaves(1), StaticSnapshot(3, ()), ThetaStream(0, 1))
    with pytest.raises(EmptySnapshot):
        select(Nakamoto(), StaticSnapshot(3, (1,), ()), ThetaStream(0, 1))


def test_distribution_examples():
    snap = StaticSnapshot(5, (1, 2, 3))
    d1 = selection_distribution(KLeaves(1), snap)
    assert d1 == pytest.approx({frozenset([v]): 1 / 3 for v in (1, 2, 3)})
    d2 = selection_distribution(KLeaves(2), snap)
    assert len(d2) == 3 and all(p == pytest.approx(1 / 3) for p in d2.values())
    mix = Mixture(((KLeaves(1), 0.5), (KLeaves(2), 0.5)))
    d = selection_distribution(mix, StaticSnapshot(5, (3, 4)))
    assert d == pytest.approx({frozenset([3]): 0.25, frozenset([4]): 0.25, frozenset([3, 4]): 0.5})


def test_enumeration_limit():
    with pytest.raises(TooLargeToEnumerate):
        selection_distribution(KLeaves(2), StaticSnapshot(30, tuple(range(21))))


def test_state_varying_reductions():
    snap = StaticSnapshot(9, (1, 2, 3, 4))
    assert selection_distribution(StateVarying(2, 0.0), snap) == pytest.approx(
        selection_distribution(KLeaves(1), snap))
    # alpha / sqrt(4) >= 1
    assert selection_distribution(StateVarying(2, 2.0), snap) == pytest.approx(
        selection_distribution(KLeaves(2), snap))


SPECS = [
    Nakamoto(),
    KLeaves(1),
    KLeaves(2),
    KLeaves(3),
    AllLeaves(),
    Mixture(((KLeaves(1), 0.6), (KLeaves(2), 0.3), (AllLeaves(), 0.1))),
    StateVarying(2, 1.0),
    StateVarying(3, 0.5),
]


@pytest.mark.parametrize("spec", SPECS, ids=describe)
def test_empirical_frequencies_match_enumeration(spec):
    snap = StaticSnapshot(20, (2, 5, 8, 11, 13, 19), (11, 13, 19))
    dist = selection_distribution(spec, snap)
    n = 100_000
    counts = Counter(select(spec, snap, ThetaStream(12345, t)) for t in range(1, n + 1))
    assert set(counts) <= set(dist)
    keys = sorted(dist, key=sorted)
    if len(keys) == 1:
        assert counts[keys[0]] == n
        return
    obs = [counts[k] for k in keys]
    exp = [dist[k] * n for k in keys]
    assert stats.chisquare(obs, exp).pvalue > 0.01


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.data())
def test_floyd_sample_is_a_sorted_k_subset(n, data):
    k = data.draw(st.integers(1, n))
    seed = data.draw(st.integers(0, 2**63))
    theta = ThetaStream(seed, 1)
    out = floyd_sample(n, k, theta)
    assert len(out) == k == len(set(out))
    assert out == sorted(out) and 0 <= out[0] and out[-1] < n
    assert theta.draws == k


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=10, unique=True), st.integers(0, 2**40),
       st.sampled_from(SPECS[1:]))
def test_leaf_rules_pick_leaves(leaves, seed, spec):
    snap = StaticSnapshot(60, tuple(sorted(leaves)), (max(leaves),))
    out = select(spec, snap, ThetaStream(seed, 3))
    assert out and out <= set(leaves)
