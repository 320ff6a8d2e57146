"""The longest-chain recursion ``X_t = max(X_{t-1}, 1 + X_{(t - xi_t)_+})``.

Computed straight from the delays, independently of the DAG engine, so it can
serve as an oracle for Nakamoto runs. Also holds the large-horizon checks:
growth rate, gap law, CLT and the rescaled path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._rng import XI_INDEX, as_seed, counter_uniforms
from .delays import DelayModel, chi_law, lambda_closed_form, make_delay_model
from .errors import MalformedSpec, TooFewGaps, TraceMismatch
from .timedelay import Trace, lag1_autocorrelation, sample_trace


@dataclass
class HeightSeries:
    X: np.ndarray
    trace: Trace = field(repr=False)

    @property
    def pi(self) -> np.ndarray:
        """Increment times: ``pi[k-1]`` is the first ``n`` with ``X_n >= k``."""
        return np.flatnonzero(np.diff(self.X)) + 1

    @property
    def chi_gaps(self) -> np.ndarray:
        """Gaps between successive increments, first gap from time 0 included."""
        return np.diff(np.concatenate([[0], self.pi]))

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([np.arange(len(self.X)), self.X]), fmt="%d",
                   delimiter=",", header="t,X_t", comments="")


def height_path(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=np.int64).tolist()
    X = [0] * (len(xi) + 1)
    prev = 0
    for t, d in enumerate(xi, start=1):
        back = X[t - d] + 1 if d < t else 1
        prev = back if back > prev else prev
        X[t] = prev
    return np.array(X, dtype=np.int64)


def height_recursion(trace: Trace) -> HeightSeries:
    return HeightSeries(height_path(trace.xi), trace)


def height_paths(xi: np.ndarray) -> np.ndarray:
    """Recursion for many traces at once; ``xi`` has shape ``(replicas, T)``."""
    xi = np.asarray(xi, dtype=np.int64)
    R, T = xi.shape
    X = np.zeros((R, T + 1), dtype=np.int64)
    rows = np.arange(R)
    for t in range(1, T + 1):
        back = np.maximum(t - xi[:, t - 1], 0)
        X[:, t] = np.maximum(X[:, t - 1], X[rows, back] + 1)
    return X


def sample_xi_matrix(model: DelayModel, horizon: int, seeds) -> np.ndarray:
    """Row ``i`` equals ``sample_trace(model, horizon, seeds[i]).xi``."""
    return np.stack(
        [model.quantile(counter_uniforms(as_seed(s), 1, horizon, XI_INDEX)) for s in seeds]
    )


def verify_against_dag(height_series: HeightSeries, state, trace: Trace | None = None) -> bool:
    """True iff ``X_t`` equals the maximal depth of the Nakamoto DAG for every ``t``."""
    trace = trace if trace is not None else getattr(state, "trace", None)
    if trace is not None and not height_series.trace.same_as(trace):
        raise TraceMismatch("height series and DAG were driven by different traces")
    depth = np.asarray(state.max_depth_series)
    if len(depth) != len(height_series.X):
        raise TraceMismatch("horizons differ")
    return bool(np.array_equal(depth, height_series.X))


@dataclass
class GrowthRateReport:
    estimates: np.ndarray
    mean: float
    ci: tuple
    lam: float

    @property
    def rel_error(self) -> float:
        return abs(self.mean - self.lam) / self.lam


def growth_rate_test(model, horizon: int, replicas: int = 1, seeds=None) -> GrowthRateReport:
    """``X_T / T`` per replica against the closed-form rate."""
    model = make_delay_model(model)
    seeds = list(range(replicas)) if seeds is None else list(seeds)
    est = np.array([height_recursion(sample_trace(model, horizon, s)).X[-1] / horizon for s in seeds])
    mean = float(est.mean())
    if len(est) > 1:
        half = float(stats.t.ppf(0.975, len(est) - 1) * est.std(ddof=1) / np.sqrt(len(est)))
    else:
        half = float("nan")
    return GrowthRateReport(est, mean, (mean - half, mean + half), lambda_closed_form(model))


@dataclass
class GofReport:
    pvalue: float
    statistic: float
    dof: int
    n_gaps: int
    lag1: float
    lag1_stderr: float
    degenerate: bool = False


def _binned_gof(gaps: np.ndarray, probs: np.ndarray, min_expected: float = 5.0):
    """Chi-square test of integer gaps (support 1..) against ``probs[k-1] = P(chi = k)``."""
    n = len(gaps)
    expected, observed = [], []
    acc_e, acc_o = 0.0, 0
    counts = np.bincount(gaps, minlength=len(probs) + 2)[1:]
    for k in range(len(probs)):
        acc_e += n * probs[k]
        acc_o += counts[k] if k < len(counts) else 0
        if acc_e >= min_expected:
            expected.append(acc_e)
            observed.append(acc_o)
            acc_e, acc_o = 0.0, 0
    tail_o = acc_o + int(counts[len(probs):].sum())
    tail_e = acc_e + n * max(1.0 - probs.sum(), 0.0)
    if expected:
        expected[-1] += tail_e
        observed[-1] += tail_o
    expected = np.array(expected)
    observed = np.array(observed, dtype=float)
    expected *= observed.sum() / expected.sum()
    if len(expected) < 2:
        return 1.0, 0.0, 0
    res = stats.chisquare(observed, expected)
    return float(res.pvalue), float(res.statistic), len(expected) - 1


def chi_gap_gof(height_series: HeightSeries, model=None, min_gaps: int = 1000) -> GofReport:
    """Goodness of fit of the increment gaps against ``P(chi >= k) = prod P(xi >= i)``.

    The gap from time 0 to the first increment is dropped.
    """
    model = make_delay_model(model) if model is not None else height_series.trace.model
    if model is None:
        raise MalformedSpec("need a delay model")
    gaps = height_series.chi_gaps[1:]
    if len(gaps) < min_gaps:
        raise TooFewGaps(f"{len(gaps)} gaps, need {min_gaps}")
    law = chi_law(model)
    lag1 = lag1_autocorrelation(gaps)
    if law.variance == 0.0:
        ok = bool(np.all(gaps == int(round(law.mean))))
        return GofReport(1.0 if ok else 0.0, 0.0, 0, len(gaps), lag1, 1 / np.sqrt(len(gaps)), True)
    p, stat, dof = _binned_gof(gaps, law.pmf())
    return GofReport(p, stat, dof, len(gaps), lag1, 1 / np.sqrt(len(gaps)))


@dataclass
class CLTReport:
    standardized: np.ndarray
    ks_distance: float
    ks_pvalue: float
    lam: float
    sigma2: float
    degenerate: bool

    def to_csv(self, path) -> None:
        np.savetxt(path, self.standardized, fmt="%.17g", header="z", comments="")


def clt_test(model, horizon: int, replicas: int, seed_base: int = 0) -> CLTReport:
    """KS distance of ``(X_T - lam T) / sqrt(lam^3 Var(chi) T)`` to N(0, 1)."""
    model = make_delay_model(model)
    law = chi_law(model)
    lam = 1.0 / law.mean
    sigma2 = lam**3 * law.variance
    if sigma2 == 0.0:
        return CLTReport(np.empty(0), float("nan"), float("nan"), lam, 0.0, True)
    xs = []
    chunk = 200
    for lo in range(0, replicas, chunk):
        seeds = range(seed_base + lo, seed_base + min(lo + chunk, replicas))
        xs.append(height_paths(sample_xi_matrix(model, horizon, seeds))[:, -1])
    final = np.concatenate(xs).astype(np.float64)
    z = (final - lam * horizon) / np.sqrt(sigma2 * horizon)
    ks = stats.kstest(z, "norm")
    return CLTReport(z, float(ks.statistic), float(ks.pvalue), lam, sigma2, False)


def path_functional(height_series: HeightSeries, n: int, grid, lam: float | None = None) -> np.ndarray:
    """``Z_n(u) = (X_floor(n u) - lam n u) / sqrt(n)`` on ``grid`` within [0, 1]."""
    grid = np.asarray(grid, dtype=np.float64)
    if np.any((grid < 0) | (grid > 1)):
        raise MalformedSpec("grid must lie in [0, 1]")
    if n > len(height_series.X) - 1:
        raise MalformedSpec("n exceeds the series horizon")
    if lam is None:
        lam = lambda_closed_form(height_series.trace.model)
    idx = np.floor(n * grid).astype(np.int64)
    return (height_series.X[idx] - lam * n * grid) / np.sqrt(n)
