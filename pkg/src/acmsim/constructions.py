"""Construction functions: which vertices a new vertex attaches to.

Every rule is a pure function of a past snapshot and the step's randomness
stream. Draws are consumed in a fixed order so that runs sharing a seed are
coupled across rules:

* ``Mixture`` and ``StateVarying`` spend one uniform choosing the branch;
* ``KLeaves(k)`` with more than ``k`` leaves spends ``k`` draws (Floyd's
  algorithm over leaf positions in mark order), otherwise none;
* ``Nakamoto`` spends one draw; ``AllLeaves`` and ``TwoEndedExample`` none.

A snapshot is any object exposing ``time``, ``leaf_count``, ``leaf_at(j)``,
``leaves()``, ``max_depth_count``, ``max_depth_at(j)``,
``max_depth_vertices()`` and ``vertex_with_mark(m)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Union

from .errors import EmptySnapshot, MalformedSpec, TooLargeToEnumerate

ENUMERATION_LIMIT = 20


@dataclass(frozen=True)
class Nakamoto:
    pass


@dataclass(frozen=True)
class KLeaves:
    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise MalformedSpec(f"KLeaves needs an integer k >= 1, got {self.k}")


@dataclass(frozen=True)
class AllLeaves:
    pass


@dataclass(frozen=True)
class Mixture:
    components: tuple  # ((KLeaves | AllLeaves, weight), ...)

    def __post_init__(self):
        if not self.components:
            raise MalformedSpec("mixture needs at least one component")
        total = 0.0
        for spec, weight in self.components:
            if not isinstance(spec, (KLeaves, AllLeaves)):
                raise MalformedSpec("mixture components must be KLeaves or AllLeaves")
            if weight < 0:
                raise MalformedSpec("mixture weights must be non-negative")
            total += weight
        if abs(total - 1.0) > 1e-9:
            raise MalformedSpec(f"mixture weights sum to {total}, not 1")

    @property
    def f1_weight(self) -> float:
        return sum(w for s, w in self.components if s == KLeaves(1))

    def cumulative(self) -> list[float]:
        return list(itertools.accumulate(w for _, w in self.components))


@dataclass(frozen=True)
class StateVarying:
    """``KLeaves(k)`` with probability ``min(1, alpha / sqrt(l))``, else ``KLeaves(1)``.

    ``l`` is the leaf count of the snapshot handed to the rule.
    """

    k: int
    alpha: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise MalformedSpec("StateVarying needs k >= 2")
        if not self.alpha >= 0:
            raise MalformedSpec("StateVarying needs alpha >= 0")

    def p_k(self, leaf_count: int) -> float:
        return min(1.0, self.alpha / math.sqrt(leaf_count))


@dataclass(frozen=True)
class TwoEndedExample:
    """Always attach to the vertex marked ``(m - 1)_+``, ``m`` the largest mark."""


ConstructionSpec = Union[Nakamoto, KLeaves, AllLeaves, Mixture, StateVarying, TwoEndedExample]


def _parse_component(text: str):
    text = text.strip().lower()
    if text in ("inf", "all", "f_inf"):
        return AllLeaves()
    return KLeaves(int(text))


def parse_construction(text: str) -> ConstructionSpec:
    """Parse ``nakamoto``, ``k:K``, ``all``, ``mixture:K=W,...``, ``state-varying:K:ALPHA``, ``two-ended``."""
    if not isinstance(text, str):
        raise MalformedSpec(f"construction spec must be a string, got {text!r}")
    kind, _, rest = text.strip().partition(":")
    kind = kind.lower().replace("_", "-")
    try:
        if kind in ("nakamoto", "nak"):
            return Nakamoto()
        if kind in ("k", "kleaves", "k-leaves"):
            return KLeaves(int(rest))
        if kind.startswith("f") and kind[1:].isdigit() and not rest:
            return KLeaves(int(kind[1:]))
        if kind in ("all", "all-leaves", "f-inf", "finf"):
            return AllLeaves()
        if kind == "mixture":
            comps = []
            for item in rest.split(","):
                k, sep, w = item.partition("=")
                if not sep:
                    raise MalformedSpec(f"mixture entry must be 'k=weight', got {item!r}")
                comps.append((_parse_component(k), float(w)))
            return Mixture(tuple(comps))
        if kind in ("state-varying", "statevarying", "sv"):
            k, _, alpha = rest.partition(":")
            return StateVarying(int(k), float(alpha))
        if kind in ("two-ended", "twoended"):
            return TwoEndedExample()
    except ValueError as exc:
        if isinstance(exc, MalformedSpec):
            raise
        raise MalformedSpec(f"bad construction parameters in {text!r}") from exc
    raise MalformedSpec(f"unknown construction {kind!r}")


def describe(spec: ConstructionSpec) -> str:
    if isinstance(spec, Nakamoto):
        return "nakamoto"
    if isinstance(spec, KLeaves):
        return f"k:{spec.k}"
    if isinstance(spec, AllLeaves):
        return "all"
    if isinstance(spec, Mixture):
        parts = ",".join(
            f"{'inf' if isinstance(s, AllLeaves) else s.k}={w!r}" for s, w in spec.components
        )
        return f"mixture:{parts}"
    if isinstance(spec, StateVarying):
        return f"state-varying:{spec.k}:{spec.alpha!r}"
    return "two-ended"


def floyd_sample(n: int, k: int, theta) -> list[int]:
    """Uniform k-subset of ``range(n)``, returned sorted; spends exactly k draws."""
    chosen: set[int] = set()
    for j in range(n - k, n):
        x = theta.randbelow(j + 1)
        chosen.add(j if x in chosen else x)
    return sorted(chosen)


def _k_leaves(k: int, snapshot, theta) -> frozenset:
    n = snapshot.leaf_count
    if n <= k:
        return frozenset(snapshot.leaves())
    return frozenset(snapshot.leaf_at(j) for j in floyd_sample(n, k, theta))


def select(spec: ConstructionSpec, snapshot, theta) -> frozenset:
    """Vertices the new vertex connects to, given the delayed snapshot."""
    if isinstance(spec, Nakamoto):
        n = snapshot.max_depth_count
        if n == 0:
            raise EmptySnapshot("snapshot has no vertices")
        return frozenset([snapshot.max_depth_at(theta.randbelow(n))])
    if isinstance(spec, TwoEndedExample):
        return frozenset([snapshot.vertex_with_mark(max(snapshot.time - 1, 0))])
    if snapshot.leaf_count == 0:
        raise EmptySnapshot("snapshot has no leaves")
    if isinstance(spec, KLeaves):
        return _k_leaves(spec.k, snapshot, theta)
    if isinstance(spec, AllLeaves):
        return frozenset(snapshot.leaves())
    if isinstance(spec, Mixture):
        u = theta.uniform()
        cum = spec.cumulative()
        for (component, _), c in zip(spec.components, cum):
            if u < c:
                break
        return select(component, snapshot, theta)
    if isinstance(spec, StateVarying):
        k = spec.k if theta.uniform() < spec.p_k(snapshot.leaf_count) else 1
        return _k_leaves(k, snapshot, theta)
    raise MalformedSpec(f"unsupported construction {spec!r}")


def _uniform_subsets(items: list, k: int) -> dict:
    if len(items) <= k:
        return {frozenset(items): 1.0}
    combos = list(itertools.combinations(items, k))
    p = 1.0 / len(combos)
    return {frozenset(c): p for c in combos}


def _mix_into(acc: dict, dist: dict, weight: float) -> None:
    if weight <= 0:
        return
    for subset, p in dist.items():
        acc[subset] = acc.get(subset, 0.0) + weight * p


def selection_distribution(spec: ConstructionSpec, snapshot) -> dict:
    """Exact law of :func:`select` by enumeration (test oracle)."""
    if isinstance(spec, Nakamoto):
        tops = list(snapshot.max_depth_vertices())
        if len(tops) > ENUMERATION_LIMIT:
            raise TooLargeToEnumerate(f"{len(tops)} maximal-depth vertices")
        return {frozenset([v]): 1.0 / len(tops) for v in tops}
    if isinstance(spec, TwoEndedExample):
        return {frozenset([snapshot.vertex_with_mark(max(snapshot.time - 1, 0))]): 1.0}
    leaves = list(snapshot.leaves())
    if len(leaves) > ENUMERATION_LIMIT:
        raise TooLargeToEnumerate(f"{len(leaves)} leaves exceeds {ENUMERATION_LIMIT}")
    if isinstance(spec, KLeaves):
        return _uniform_subsets(leaves, spec.k)
    if isinstance(spec, AllLeaves):
        return {frozenset(leaves): 1.0}
    acc: dict = {}
    if isinstance(spec, Mixture):
        for component, weight in spec.components:
            _mix_into(acc, selection_distribution(component, snapshot), weight)
        return acc
    if isinstance(spec, StateVarying):
        p = spec.p_k(len(leaves))
        _mix_into(acc, _uniform_subsets(leaves, spec.k), p)
        _mix_into(acc, _uniform_subsets(leaves, 1), 1.0 - p)
        return acc
    raise MalformedSpec(f"unsupported construction {spec!r}")


@dataclass(frozen=True)
class StaticSnapshot:
    """A hand-built snapshot: explicit leaves and maximal-depth vertices (ids = marks)."""

    time: int
    leaf_list: tuple
    top_list: tuple = ()

    @property
    def leaf_count(self) -> int:
        return len(self.leaf_list)

    def leaf_at(self, j: int) -> int:
        return self.leaf_list[j]

    def leaves(self) -> list:
        return list(self.leaf_list)

    @property
    def max_depth_count(self) -> int:
        return len(self.top_list)

    def max_depth_at(self, j: int) -> int:
        return self.top_list[j]

    def max_depth_vertices(self) -> list:
        return list(self.top_list)

    def vertex_with_mark(self, mark: int) -> int:
        return mark
