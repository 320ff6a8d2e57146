"""Delay traces, the time-delay graph and regeneration detection.

A time ``t`` starts a regeneration interval of length ``r`` when
``r <= xi_{t+s} <= max(s, r)`` for every ``s >= 0``: no delay edge issued at or
after ``t`` reaches back before ``t``. The event depends on the whole future,
so a finite trace can only certify it where the unseen tail is negligible;
those times are reported as certified and the rest as candidates.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._rng import XI_INDEX, ThetaStream, as_seed, counter_uniforms
from .delays import DEFAULT_CENSOR_EPS, DelayModel, make_delay_model
from .errors import MalformedSpec, TooFewRegenerations, WrongMinimumSupport


@dataclass(frozen=True, eq=False)
class Trace:
    """One reproducible realisation of the delays ``xi_1..xi_T``.

    ``xi[t - 1]`` holds ``xi_t``. Construction randomness for step ``t`` comes
    from :meth:`theta`, which is keyed by ``(seed, t)`` only.
    """

    seed: int
    xi: np.ndarray
    model: Optional[DelayModel] = None

    @property
    def horizon(self) -> int:
        return len(self.xi)

    def theta(self, t: int) -> ThetaStream:
        return ThetaStream(self.seed, t)

    def same_as(self, other: "Trace") -> bool:
        return self.seed == other.seed and np.array_equal(self.xi, other.xi)

    def prefix(self, horizon: int) -> "Trace":
        return Trace(self.seed, self.xi[:horizon], self.model)


def sample_trace(model, horizon: int, seed: int) -> Trace:
    """Draw ``xi_1..xi_T`` i.i.d. from ``model`` with the counter generator."""
    model = make_delay_model(model)
    if horizon < 1:
        raise MalformedSpec("horizon must be >= 1")
    u = counter_uniforms(as_seed(seed), 1, int(horizon), XI_INDEX)
    return Trace(int(seed), model.quantile(u), model)


def trace_from_xi(xi, model=None, seed: int = 0) -> Trace:
    """Wrap an explicit delay sequence (``xi[0]`` is ``xi_1``)."""
    arr = np.asarray(xi, dtype=np.int64)
    if arr.ndim != 1 or len(arr) == 0 or arr.min() < 1:
        raise MalformedSpec("delays must be a non-empty sequence of integers >= 1")
    return Trace(int(seed), arr, None if model is None else make_delay_model(model))


def build_time_delay_graph(trace: Trace) -> np.ndarray:
    """Edges ``t -> (t - xi_t)_+`` for ``t = 1..T`` as a ``(T, 2)`` array."""
    t = np.arange(1, trace.horizon + 1, dtype=np.int64)
    return np.column_stack([t, np.maximum(t - trace.xi, 0)])


def regeneration_predicate(xi: np.ndarray, r: int) -> np.ndarray:
    """Boolean mask over ``t = 1..T``: the regeneration condition holds for every observed ``s``."""
    xi = np.asarray(xi, dtype=np.int64)
    n = len(xi)
    t = np.arange(1, n + 1, dtype=np.int64)
    # window [t, t+r) must carry delay exactly r (clipped to the horizon)
    bad = np.concatenate([[0], np.cumsum(xi != r)])
    hi = np.minimum(t + r - 1, n)
    window_ok = (bad[hi] - bad[t - 1]) == 0
    # later edges u >= t + r must land at or after t: min (u - xi_u) >= t
    reach = t - xi
    suffix_min = np.minimum.accumulate(reach[::-1])[::-1]
    later = np.full(n, np.iinfo(np.int64).max)
    start = t + r  # first u to check, 1-based
    has = start <= n
    later[has] = suffix_min[start[has] - 1]
    return window_ok & (later >= t)


@dataclass
class RegenerationReport:
    times: np.ndarray
    r: int
    censor_margin: int
    horizon: int
    candidates: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    period: int = 1

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def eligible(self) -> int:
        """Number of times ``1..T-W`` at which certification is conclusive."""
        return max(self.horizon - self.censor_margin, 0)

    @property
    def density(self) -> float:
        return len(self.times) / self.eligible if self.eligible else float("nan")

    @property
    def counts(self) -> np.ndarray:
        """``N_n`` for ``n = 0..T-W``: certified times in ``[1, n]``."""
        out = np.zeros(self.eligible + 1, dtype=np.int64)
        np.add.at(out, self.times, 1)
        return np.cumsum(out)

    def long_starts(self) -> np.ndarray:
        """Certified ``t`` with ``t + r`` also certified (back-to-back intervals)."""
        return self.times[np.isin(self.times + self.r, self.times)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "gap"])
            gaps = self.gaps
            for i, t in enumerate(self.times):
                writer.writerow([int(t), int(gaps[i]) if i < len(gaps) else ""])

    def summary(self) -> dict:
        out = {
            "r": self.r,
            "horizon": self.horizon,
            "censor_margin": self.censor_margin,
            "period": self.period,
            "certified": int(len(self.times)),
            "candidates": int(len(self.candidates)),
            "density": self.density,
        }
        if len(self.times) >= 2:
            out.update(gap_statistics(self).as_dict())
        return out

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, sort_keys=True, indent=2)


def detect_regeneration_intervals(
    trace: Trace, model=None, censor_eps: float = DEFAULT_CENSOR_EPS
) -> RegenerationReport:
    """Certified starts of regeneration intervals of length ``r``."""
    model = make_delay_model(model) if model is not None else trace.model
    if model is None:
        raise MalformedSpec("a delay model is needed to set r and the censor margin")
    mask = regeneration_predicate(trace.xi, model.r)
    w = model.censor_margin(censor_eps)
    t = np.flatnonzero(mask) + 1
    cut = trace.horizon - w
    return RegenerationReport(
        times=t[t <= cut],
        r=model.r,
        censor_margin=w,
        horizon=trace.horizon,
        candidates=t[t > cut],
        period=model.period,
    )


def detect_regeneration_times(
    trace: Trace, model=None, censor_eps: float = DEFAULT_CENSOR_EPS
) -> RegenerationReport:
    """Certified regeneration times; only defined when ``P(xi = 1) > 0``."""
    model = make_delay_model(model) if model is not None else trace.model
    if model is not None and model.r != 1:
        raise WrongMinimumSupport(f"regeneration times need r = 1, model has r = {model.r}")
    return detect_regeneration_intervals(trace, model, censor_eps)


@dataclass(frozen=True)
class GapSummary:
    n: int
    mean: float
    variance: float
    lag1: float
    lag1_stderr: float

    def as_dict(self) -> dict:
        return {
            "gap_count": self.n,
            "gap_mean": self.mean,
            "gap_variance": self.variance,
            "gap_lag1": self.lag1,
            "gap_lag1_stderr": self.lag1_stderr,
        }


def lag1_autocorrelation(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 3:
        return float("nan")
    d = x - x.mean()
    denom = np.dot(d, d)
    if denom == 0:
        return 0.0
    return float(np.dot(d[:-1], d[1:]) / denom)


def gap_statistics(report: RegenerationReport) -> GapSummary:
    if len(report.times) < 2:
        raise TooFewRegenerations(f"need >= 2 certified regenerations, have {len(report.times)}")
    g = report.gaps.astype(np.float64)
    var = float(g.var(ddof=1)) if len(g) > 1 else 0.0
    return GapSummary(len(g), float(g.mean()), var, lag1_autocorrelation(g), 1.0 / np.sqrt(len(g)))


def palm_identity_check(
    trace: Trace, report: RegenerationReport, H: Callable = np.square
) -> tuple[float, float]:
    """Both sides of ``E h(tau_1) = q E H(gamma_1)`` estimated on one trace.

    ``h(x) = H(x + 1) - H(x)``. The left side averages ``h(next_regen(t) - t)``
    over ``t = 1..last certified time``; the right side is the certified
    density times the mean of ``H`` over the observed gaps.
    """
    if float(H(0)) != 0.0:
        raise MalformedSpec("H must satisfy H(0) = 0")
    times = report.times
    if len(times) < 2:
        raise TooFewRegenerations("palm identity needs at least two certified regenerations")
    t = np.arange(1, times[-1] + 1, dtype=np.int64)
    wait = (times[np.searchsorted(times, t)] - t).astype(np.float64)
    lhs = float(np.mean(np.asarray(H(wait + 1.0)) - np.asarray(H(wait))))
    rhs = report.density * float(np.mean(np.asarray(H(report.gaps.astype(np.float64)))))
    return lhs, rhs
