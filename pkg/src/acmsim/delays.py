"""Delay laws on {1, 2, ...} and the closed-form quantities derived from them.

A :class:`DelayModel` wraps one of four law families and exposes tail
probabilities, the law of the Nakamoto inter-increment gap ``chi``, the
longest-chain growth rate ``1 / E[chi]`` and the regeneration probability.
Infinite products and series are truncated with explicit tail bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .errors import InfiniteMean, MalformedSpec

DEFAULT_EPS = 1e-12
DEFAULT_CENSOR_EPS = 1e-9
_MAX_TERMS = 10_000_000


@dataclass(frozen=True)
class Deterministic:
    value: int


@dataclass(frozen=True)
class Geometric:
    """``P(xi = k) = p (1 - p)^(k - 1)`` for ``k >= 1``."""

    p: float


@dataclass(frozen=True)
class ShiftedGeometric:
    """``shift + Geometric(p)``, supported on ``k >= shift + 1``."""

    shift: int
    p: float


@dataclass(frozen=True)
class FiniteSupport:
    pairs: tuple  # ((value, prob), ...)


LawSpec = Union[Deterministic, Geometric, ShiftedGeometric, FiniteSupport]


@dataclass(frozen=True)
class DelayModel:
    spec: LawSpec
    r: int
    mean: float
    tail_truncation_eps: float = DEFAULT_EPS
    values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    probs: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    # -- elementary probabilities -------------------------------------------------

    @property
    def bounded_support(self) -> Optional[int]:
        """Largest support point, or ``None`` for unbounded laws."""
        spec = self.spec
        if isinstance(spec, Deterministic):
            return spec.value
        if isinstance(spec, FiniteSupport):
            return int(self.values[-1])
        if spec.p == 1.0:
            return self.r
        return None

    def pmf(self, k: int) -> float:
        k = int(k)
        spec = self.spec
        if isinstance(spec, Deterministic):
            return 1.0 if k == spec.value else 0.0
        if isinstance(spec, FiniteSupport):
            idx = np.searchsorted(self.values, k)
            if idx < len(self.values) and self.values[idx] == k:
                return float(self.probs[idx])
            return 0.0
        shift = spec.shift if isinstance(spec, ShiftedGeometric) else 0
        j = k - shift
        if j < 1:
            return 0.0
        return spec.p * (1.0 - spec.p) ** (j - 1)

    def sf(self, k: int) -> float:
        """``P(xi >= k)``."""
        k = int(k)
        if k <= self.r:
            return 1.0
        spec = self.spec
        if isinstance(spec, Deterministic):
            return 0.0
        if isinstance(spec, FiniteSupport):
            idx = np.searchsorted(self.values, k)
            return float(self.probs[idx:].sum())
        shift = spec.shift if isinstance(spec, ShiftedGeometric) else 0
        return (1.0 - spec.p) ** (k - 1 - shift)

    def cdf(self, k: int) -> float:
        """``P(xi <= k)``."""
        return 1.0 - self.sf(int(k) + 1)

    def excess_mean(self, m: int) -> float:
        """``E(xi - m)_+``, equivalently ``sum_{s >= m} P(xi > s)``."""
        m = int(m)
        spec = self.spec
        if isinstance(spec, Deterministic):
            return float(max(spec.value - m, 0))
        if isinstance(spec, FiniteSupport):
            return float(np.sum(self.probs * np.maximum(self.values - m, 0)))
        shift = spec.shift if isinstance(spec, ShiftedGeometric) else 0
        if m < shift:
            return (shift - m) + 1.0 / spec.p
        return (1.0 - spec.p) ** (m - shift) / spec.p

    def moment(self, n: int) -> float:
        """``E xi^n``; reported for diagnostics, never enforced."""
        spec = self.spec
        if isinstance(spec, Deterministic):
            return float(spec.value) ** n
        if isinstance(spec, FiniteSupport):
            return float(np.sum(self.probs * self.values.astype(float) ** n))
        total, k = 0.0, self.r
        while True:
            term = self.pmf(k) * float(k) ** n
            total += term
            if k > self.r + 10 and term < 1e-16 * max(total, 1.0):
                return total
            k += 1

    @property
    def period(self) -> int:
        """gcd of the support."""
        spec = self.spec
        if isinstance(spec, Deterministic):
            return spec.value
        if isinstance(spec, FiniteSupport):
            vals = self.values[self.probs > 0]
            return int(np.gcd.reduce(vals))
        return self.r if spec.p == 1.0 else 1

    def quantile(self, u):
        """Inverse CDF applied elementwise to uniforms in (0, 1)."""
        u = np.asarray(u, dtype=np.float64)
        spec = self.spec
        if isinstance(spec, Deterministic):
            return np.full(u.shape, spec.value, dtype=np.int64)
        if isinstance(spec, FiniteSupport):
            cum = np.cumsum(self.probs)
            idx = np.minimum(np.searchsorted(cum, u, side="left"), len(cum) - 1)
            return self.values[idx].astype(np.int64)
        shift = spec.shift if isinstance(spec, ShiftedGeometric) else 0
        if spec.p == 1.0:
            return np.full(u.shape, shift + 1, dtype=np.int64)
        k = np.floor(np.log(u) / math.log1p(-spec.p)).astype(np.int64)
        return k + 1 + shift

    def censor_margin(self, censor_eps: float = DEFAULT_CENSOR_EPS) -> int:
        """Horizon margin W beyond which regeneration is certified conclusively.

        Bounded support B gives W = B; otherwise W is the smallest integer
        with ``sum_{s > W} P(xi > s) < censor_eps``.
        """
        bound = self.bounded_support
        if bound is not None:
            return int(bound)
        w = self.r
        while self.excess_mean(w + 1) >= censor_eps:
            w += 1
        return w

    def describe(self) -> str:
        spec = self.spec
        if isinstance(spec, Deterministic):
            return f"det:{spec.value}"
        if isinstance(spec, Geometric):
            return f"geometric:{spec.p!r}"
        if isinstance(spec, ShiftedGeometric):
            return f"shifted-geometric:{spec.shift}:{spec.p!r}"
        body = ",".join(f"{int(v)}={float(p)!r}" for v, p in zip(self.values, self.probs))
        return f"finite:{body}"


def _parse_prob(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise MalformedSpec(f"not a probability: {text!r}") from exc


def _parse_int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError as exc:
        raise MalformedSpec(f"not an integer: {text!r}") from exc


def parse_delay_spec(text: str) -> LawSpec:
    """Parse ``det:C``, ``geometric:P``, ``shifted-geometric:S:P`` or ``finite:V=P,...``."""
    if not isinstance(text, str) or ":" not in text:
        raise MalformedSpec(f"delay spec must look like 'kind:params', got {text!r}")
    kind, _, rest = text.strip().partition(":")
    kind = kind.lower().replace("_", "-")
    if kind in ("det", "deterministic"):
        return Deterministic(_parse_int(rest))
    if kind in ("geometric", "geom"):
        return Geometric(_parse_prob(rest))
    if kind in ("shifted-geometric", "sgeom"):
        shift, sep, p = rest.partition(":")
        if not sep:
            raise MalformedSpec("shifted-geometric needs 'shift:p'")
        return ShiftedGeometric(_parse_int(shift), _parse_prob(p))
    if kind == "finite":
        pairs = []
        for item in rest.split(","):
            value, sep, prob = item.partition("=")
            if not sep:
                raise MalformedSpec(f"finite support entry must be 'value=prob', got {item!r}")
            pairs.append((_parse_int(value), _parse_prob(prob)))
        return FiniteSupport(tuple(pairs))
    raise MalformedSpec(f"unknown delay kind {kind!r}")


def make_delay_model(spec, eps: float = DEFAULT_EPS) -> DelayModel:
    """Validate a delay law and compute its minimal support point and mean.

    ``spec`` may be a law dataclass, a spec string (see :func:`parse_delay_spec`)
    or an existing :class:`DelayModel`, which is returned unchanged.
    """
    if isinstance(spec, DelayModel):
        return spec
    if isinstance(spec, str):
        spec = parse_delay_spec(spec)
    if not 0.0 < eps < 1.0:
        raise MalformedSpec("tail_truncation_eps must lie in (0, 1)")

    if isinstance(spec, Deterministic):
        if int(spec.value) != spec.value or spec.value < 1:
            raise MalformedSpec("deterministic delay must be an integer >= 1")
        return DelayModel(Deterministic(int(spec.value)), int(spec.value), float(spec.value), eps)

    if isinstance(spec, (Geometric, ShiftedGeometric)):
        p = float(spec.p)
        shift = int(spec.shift) if isinstance(spec, ShiftedGeometric) else 0
        if isinstance(spec, ShiftedGeometric) and (shift != spec.shift or shift < 0):
            raise MalformedSpec("shift must be a non-negative integer")
        if not 0.0 <= p <= 1.0 or math.isnan(p):
            raise MalformedSpec(f"geometric parameter must lie in (0, 1], got {p}")
        if p == 0.0:
            raise InfiniteMean("geometric parameter 0 gives an infinite mean")
        law = ShiftedGeometric(shift, p) if isinstance(spec, ShiftedGeometric) else Geometric(p)
        return DelayModel(law, shift + 1, shift + 1.0 / p, eps)

    if isinstance(spec, FiniteSupport):
        if not spec.pairs:
            raise MalformedSpec("finite support law needs at least one point")
        merged: dict[int, float] = {}
        for value, prob in spec.pairs:
            if int(value) != value or value < 1:
                raise MalformedSpec(f"support values must be integers >= 1, got {value}")
            if prob < 0 or math.isnan(prob):
                raise MalformedSpec(f"negative probability {prob}")
            merged[int(value)] = merged.get(int(value), 0.0) + float(prob)
        total = sum(merged.values())
        if abs(total - 1.0) > 1e-9:
            raise MalformedSpec(f"probabilities sum to {total}, not 1")
        values = np.array(sorted(v for v, p in merged.items() if p > 0), dtype=np.int64)
        probs = np.array([merged[v] for v in values], dtype=np.float64) / total
        law = FiniteSupport(tuple((int(v), float(p)) for v, p in zip(values, probs)))
        mean = float(np.dot(values, probs))
        return DelayModel(law, int(values[0]), mean, eps, values, probs)

    raise MalformedSpec(f"unsupported delay spec {spec!r}")


# -- chi law, growth rate, regeneration probability ---------------------------------


@dataclass(frozen=True)
class ChiLaw:
    """Law of the gap between successive height increments.

    ``survival[k - 1] = P(chi >= k) = prod_{i <= k} P(xi >= i)``.
    """

    survival: np.ndarray
    mean: float
    variance: float
    n_terms: int
    tail_bound: float

    def pmf(self) -> np.ndarray:
        """``P(chi = k)`` for ``k = 1..n_terms``."""
        nxt = np.append(self.survival[1:], 0.0)
        return self.survival - nxt


def chi_law(model: DelayModel, eps: Optional[float] = None) -> ChiLaw:
    eps = model.tail_truncation_eps if eps is None else eps
    survival = []
    s = 1.0
    k = 1
    while k <= _MAX_TERMS:
        s *= model.sf(k)
        if s < eps:
            break
        survival.append(s)
        k += 1
    surv = np.array(survival)
    ks = np.arange(1, len(surv) + 1, dtype=np.float64)
    mean = float(surv.sum())
    second = float(np.sum((2.0 * ks - 1.0) * surv))
    rho = model.sf(k + 1)
    tail = s / (1.0 - rho) if rho < 1.0 else s
    return ChiLaw(surv, mean, max(second - mean * mean, 0.0), len(surv), tail)


def lambda_closed_form(model: DelayModel) -> float:
    """Almost-sure growth rate of the longest chain, ``1 / E[chi]``."""
    return 1.0 / chi_law(model).mean


@dataclass(frozen=True)
class RegenProduct:
    value: float
    n_factors: int
    tail_bound: float


def regen_product(model: DelayModel, eps: Optional[float] = None) -> RegenProduct:
    """``prod_{s >= 0} P(xi <= max(s, r))`` with its truncation audit.

    The product stops after factor ``t`` once ``sum_{s > t} P(xi > s) < eps``,
    which bounds the gap between the truncated and the full product.
    """
    eps = model.tail_truncation_eps if eps is None else eps
    r = model.r
    value = 1.0
    s = 0
    while True:
        value *= model.cdf(max(s, r))
        if s >= r and model.excess_mean(s + 1) < eps:
            break
        s += 1
    return RegenProduct(value, s + 1, model.excess_mean(s + 1))


def regen_probability(model: DelayModel) -> float:
    """Probability that a given time starts a regeneration interval (q-tilde; q when r = 1)."""
    return regen_product(model).value
