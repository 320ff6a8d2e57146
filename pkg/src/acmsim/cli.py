"""Command-line front end.

Subcommands: ``lambda``, ``simulate``, ``regen``, ``analyze``, ``experiment``
and ``export-dot``. Settings come from an optional flat ``key = value`` file;
flags and ``--set key=value`` pairs override it. Exit codes: 0 success or
pass, 1 experiment threshold failed, 2 configuration error, 3 resource bound.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    EXACT_HORIZON_LIMIT,
    commuting_check,
    confirmation_report,
    drift_from_pairs,
    drift_pairs,
    leaf_growth_exponent,
    phase_transition_sweep,
    single_leaf_hitting,
    write_dot,
    write_json,
)
from .constructions import Nakamoto, parse_construction
from .delays import (
    DEFAULT_CENSOR_EPS,
    chi_law,
    lambda_closed_form,
    make_delay_model,
    regen_probability,
    regen_product,
)
from .engine import InitialGraph, run_trace
from .errors import ACMError, ConfigError, HorizonTooLargeForExact, ResourceBoundExceeded, TooFewGaps
from .height import chi_gap_gof, clt_test, height_recursion, verify_against_dag
from .timedelay import (
    detect_regeneration_intervals,
    gap_statistics,
    palm_identity_check,
    sample_trace,
)

log = logging.getLogger("acmsim")

SCHEMA = "acmsim.result/1"
OUTPUT_ENV = "ACMSIM_OUTPUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3
# rough per-vertex footprint of a stored run: arrays, edges, Fenwick, series
BYTES_PER_VERTEX = 160


# -- configuration ---------------------------------------------------------------------


@dataclasses.dataclass
class ExperimentConfig:
    delay: str = "geometric:0.5"
    construction: str = "nakamoto"
    horizon: int = 1000
    replicas: int = 1
    seed_base: int = 0
    workers: int = 4
    out_dir: str = "acmsim-out"
    preset: str = ""
    confirm: bool = True
    dot: bool = False
    initial_leaves: int = 0
    margin: int = -1
    censor_eps: float = DEFAULT_CENSOR_EPS
    k: int = 2
    k_list: tuple = (2, 4, 8, 16, 32)
    alpha_grid: tuple = (0.1, 0.5, 2.0, 10.0, 50.0)
    level_min: int = 20
    min_hits: int = 10
    memory_limit_mb: int = 0  # 0: half of physical memory

    def validate(self) -> "ExperimentConfig":
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.memory_limit_mb < 0:
            raise ConfigError("memory_limit_mb must be >= 0")
        if self.initial_leaves < 0:
            raise ConfigError("initial_leaves must be >= 0")
        if self.preset and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        make_delay_model(self.delay)
        parse_construction(self.construction)
        return self

    @property
    def seeds(self) -> list:
        return [self.seed_base + i for i in range(self.replicas)]

    @property
    def g0(self):
        return InitialGraph.star(self.initial_leaves) if self.initial_leaves else None

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("workers")  # results do not depend on it
        out.pop("out_dir")
        out.pop("memory_limit_mb")
        for key in ("k_list", "alpha_grid"):
            out[key] = list(out[key])
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, text: str):
    default = _FIELDS[key].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(float(text)) if "e" in text.lower() else int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(float(x)) if kind is int else kind(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    return text


def parse_assignment(item: str) -> tuple:
    key, sep, value = item.partition("=")
    key = key.strip().replace("-", "_")
    if not sep:
        raise ConfigError(f"expected key=value, got {item!r}")
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return key, _coerce(key, value)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = parse_assignment(line)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        out[key] = value
    return out


def build_config(args, base: dict | None = None) -> ExperimentConfig:
    values = dict(base or {})
    if getattr(args, "config", None):
        try:
            values.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    if os.environ.get(OUTPUT_ENV):
        values["out_dir"] = os.environ[OUTPUT_ENV]
    for key in _FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = _coerce(key, str(flag)) if isinstance(flag, str) else flag
    for item in getattr(args, "set", None) or []:
        key, value = parse_assignment(item)
        values[key] = value
    return ExperimentConfig(**values).validate()


# -- helpers ---------------------------------------------------------------------------


def fan_out(fn, items, workers: int) -> list:
    """Apply ``fn`` over ``items`` on threads; results keep input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _out_dir(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _result(cfg: ExperimentConfig, kind: str, replicas: list, aggregate: dict,
            passed=None, claim: str = "") -> dict:
    out = {
        "schema": SCHEMA,
        "version": __version__,
        "command": kind,
        "config": cfg.echo(),
        "replicas": replicas,
        "aggregate": aggregate,
    }
    if claim:
        out["claim"] = claim
    if passed is not None:
        out["passed"] = bool(passed)
    return out


def _check_memory(cfg: ExperimentConfig) -> None:
    """Refuse runs whose stored graphs would not fit in ``memory_limit_mb``."""
    live = min(cfg.workers, cfg.replicas)
    need = live * (cfg.horizon + cfg.initial_leaves + 1) * BYTES_PER_VERTEX
    limit = cfg.memory_limit_mb * 2**20 or os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES") // 2
    if need > limit:
        raise ResourceBoundExceeded(
            f"about {need / 2**20:.0f} MiB needed for {live} concurrent run(s), "
            f"limit is {limit / 2**20:.0f} MiB")


def _exact_allowed(cfg: ExperimentConfig) -> bool:
    if cfg.confirm and cfg.horizon > EXACT_HORIZON_LIMIT:
        log.warning("exact confirmation disabled: horizon %d exceeds %d", cfg.horizon, EXACT_HORIZON_LIMIT)
        return False
    return cfg.confirm


# -- lambda ----------------------------------------------------------------------------


def cmd_lambda(args) -> int:
    model = make_delay_model(args.delay)
    law = chi_law(model)
    prod = regen_product(model)
    out = {
        "schema": SCHEMA,
        "delay": model.describe(),
        "r": model.r,
        "mean_delay": model.mean,
        "lambda": lambda_closed_form(model),
        "chi_mean": law.mean,
        "chi_variance": law.variance,
        "clt_variance": law.variance / law.mean**3,
        "q": prod.value,
        "q_factors": prod.n_factors,
        "q_tail_bound": prod.tail_bound,
        "censor_margin": model.censor_margin(),
    }
    _print_json(out)
    return EXIT_OK


def _print_json(obj) -> None:
    import json

    from .analysis import _json_default

    print(json.dumps(obj, sort_keys=True, indent=2, default=_json_default))


# -- simulate / regen / analyze / export-dot ---------------------------------------------


def _simulate_one(cfg: ExperimentConfig, model, spec, out: Path, exact: bool):
    def job(seed):
        trace = sample_trace(model, cfg.horizon, seed)
        state = run_trace(trace, spec, cfg.g0)
        tag = f"seed{seed}"
        state.write_series_csv(out / f"series_{tag}.csv")
        state.write_edge_csv(out / f"edges_{tag}.csv")
        report = detect_regeneration_intervals(trace, model, cfg.censor_eps)
        report.to_csv(out / f"regen_{tag}.csv")
        metrics = {
            "seed": seed,
            "final_leaves": int(state.leaf_series[-1]),
            "max_leaves": int(max(state.leaf_series)),
            "max_depth": int(state.max_depth_series[-1]),
            "regenerations": int(len(report.times)),
        }
        conf = None
        if exact:
            conf = confirmation_report(state, trace, spec, None if cfg.margin < 0 else cfg.margin,
                                       cfg.censor_eps)
            conf.to_csv(out / f"confirmed_{tag}.csv")
            metrics["confirmed_exact"] = len(conf.confirmed_exact)
        if cfg.dot:
            ids = conf.settled_ids if conf else ()
            anchors = {state.vertex_of_mark(m) for m in conf.confirmed_anchor} if conf else ()
            write_dot(state, out / f"graph_{tag}.dot", ids, anchors)
        return metrics

    return job


def cmd_simulate(cfg: ExperimentConfig) -> int:
    model = make_delay_model(cfg.delay)
    spec = parse_construction(cfg.construction)
    out = _out_dir(cfg)
    job = _simulate_one(cfg, model, spec, out, _exact_allowed(cfg))
    reps = fan_out(job, cfg.seeds, cfg.workers)
    agg = {"mean_final_leaves": float(np.mean([r["final_leaves"] for r in reps]))}
    write_json(_result(cfg, "simulate", reps, agg), out / "summary.json")
    return EXIT_OK


def cmd_regen(cfg: ExperimentConfig) -> int:
    model = make_delay_model(cfg.delay)
    out = _out_dir(cfg)

    def job(seed):
        trace = sample_trace(model, cfg.horizon, seed)
        report = detect_regeneration_intervals(trace, model, cfg.censor_eps)
        report.to_csv(out / f"regen_seed{seed}.csv")
        return {"seed": seed, **report.summary()}

    reps = fan_out(job, cfg.seeds, cfg.workers)
    agg = {"q": regen_probability(model),
           "mean_density": float(np.mean([r["density"] for r in reps]))}
    write_json(_result(cfg, "regen", reps, agg), out / "regen.json")
    return EXIT_OK


def cmd_analyze(cfg: ExperimentConfig) -> int:
    """Per-replica confirmation, height checks, regeneration and drift summaries."""
    model = make_delay_model(cfg.delay)
    spec = parse_construction(cfg.construction)
    out = _out_dir(cfg)
    exact = _exact_allowed(cfg)

    def job(seed):
        trace = sample_trace(model, cfg.horizon, seed)
        state = run_trace(trace, spec, cfg.g0)
        report = detect_regeneration_intervals(trace, model, cfg.censor_eps)
        m = {"seed": seed, "final_leaves": int(state.leaf_series[-1]),
             "regenerations": int(len(report.times))}
        if isinstance(spec, Nakamoto):
            hs = height_recursion(trace)
            m["height_dag_equal"] = verify_against_dag(hs, state, trace)
            try:
                gof = chi_gap_gof(hs, model)
                m.update(chi_gof_pvalue=gof.pvalue, chi_gaps=gof.n_gaps, chi_lag1=gof.lag1)
            except TooFewGaps:
                m["chi_gof_pvalue"] = None
        elif model.r == 1:
            m["single_leaf_hits"] = single_leaf_hitting(state, report)
        if len(report.times) >= 2:
            lv, d = drift_pairs(state, report)
            m["drift_pairs"] = int(len(lv))
        if exact:
            conf = confirmation_report(state, trace, spec, None if cfg.margin < 0 else cfg.margin,
                                       cfg.censor_eps)
            conf.to_csv(out / f"confirmed_seed{seed}.csv")
            m.update(conf.summary())
        return m

    reps = fan_out(job, cfg.seeds, cfg.workers)
    agg = {}
    for key in ("height_dag_equal", "anchor_subset_of_exact"):
        vals = [r[key] for r in reps if key in r]
        if vals:
            agg[f"all_{key}"] = all(vals)
    write_json(_result(cfg, "analyze", reps, agg), out / "analysis.json")
    return EXIT_OK


def cmd_export_dot(cfg: ExperimentConfig, path: str | None) -> int:
    model = make_delay_model(cfg.delay)
    spec = parse_construction(cfg.construction)
    trace = sample_trace(model, cfg.horizon, cfg.seed_base)
    state = run_trace(trace, spec, cfg.g0)
    ids, anchors = set(), set()
    if _exact_allowed(cfg):
        conf = confirmation_report(state, trace, spec, None if cfg.margin < 0 else cfg.margin, cfg.censor_eps)
        ids = conf.settled_ids
        anchors = {state.vertex_of_mark(m) for m in conf.confirmed_anchor}
    target = Path(path) if path else _out_dir(cfg) / f"graph_seed{cfg.seed_base}.dot"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_dot(state, target, ids, anchors)
    return EXIT_OK


# -- presets -----------------------------------------------------------------------------


def _preset_nakamoto_rate(cfg):
    model = make_delay_model(cfg.delay)
    lam = lambda_closed_form(model)

    def job(seed):
        hs = height_recursion(sample_trace(model, cfg.horizon, seed))
        est = hs.X[-1] / cfg.horizon
        return {"seed": seed, "rate": float(est), "rel_error": abs(est - lam) / lam}

    reps = fan_out(job, cfg.seeds, cfg.workers)
    worst = max(r["rel_error"] for r in reps)
    return reps, {"lambda": lam, "max_rel_error": worst, "tolerance": 0.01}, worst <= 0.01


def _preset_nakamoto_clt(cfg):
    rep = clt_test(cfg.delay, cfg.horizon, cfg.replicas, cfg.seed_base)
    agg = {"lambda": rep.lam, "sigma2": rep.sigma2, "ks_distance": rep.ks_distance,
           "ks_pvalue": rep.ks_pvalue, "degenerate": rep.degenerate, "tolerance": 0.06}
    ok = rep.degenerate or rep.ks_distance <= 0.06
    return [], agg, ok


def _preset_regen_stats(cfg):
    model = make_delay_model(cfg.delay)
    q = regen_probability(model)

    def job(seed):
        report = detect_regeneration_intervals(sample_trace(model, cfg.horizon, seed), model, cfg.censor_eps)
        gs = gap_statistics(report)
        return {"seed": seed, "density": report.density, "gap_mean": gs.mean,
                "density_rel_error": abs(report.density - q) / q,
                "gap_mean_rel_error": abs(gs.mean - 1 / q) * q, "gap_lag1": gs.lag1}

    reps = fan_out(job, cfg.seeds, cfg.workers)
    worst = max(max(r["density_rel_error"], r["gap_mean_rel_error"]) for r in reps)
    return reps, {"q": q, "max_rel_error": worst, "tolerance": 0.02}, worst <= 0.02


def _preset_palm(cfg):
    model = make_delay_model(cfg.delay)

    def job(seed):
        trace = sample_trace(model, cfg.horizon, seed)
        lhs, rhs = palm_identity_check(trace, detect_regeneration_intervals(trace, model, cfg.censor_eps))
        return {"seed": seed, "lhs": lhs, "rhs": rhs, "rel_discrepancy": abs(lhs - rhs) / rhs}

    reps = fan_out(job, cfg.seeds, cfg.workers)
    worst = max(r["rel_discrepancy"] for r in reps)
    return reps, {"H": "x^2", "max_rel_discrepancy": worst, "tolerance": 0.05}, worst <= 0.05


def _preset_f1_growth(cfg):
    rep = leaf_growth_exponent(cfg.delay, cfg.horizon, cfg.replicas, cfg.seed_base,
                               spec=parse_construction(cfg.construction), workers=cfg.workers)
    agg = {**rep.summary(), "slope_range": [0.45, 0.55]}
    return [], agg, 0.45 <= rep.slope <= 0.55 and rep.bound_ok


def _preset_f2_stability(cfg):
    model = make_delay_model(cfg.delay)
    spec = parse_construction(cfg.construction)

    def job(seed):
        trace = sample_trace(model, cfg.horizon, seed)
        state = run_trace(trace, spec, cfg.g0)
        report = detect_regeneration_intervals(trace, model, cfg.censor_eps)
        lv, d = drift_pairs(state, report)
        return {"seed": seed, "single_leaf_hits": single_leaf_hitting(state, report)}, (lv, d)

    results = fan_out(job, cfg.seeds, cfg.workers)
    reps = [r for r, _ in results]
    drift = drift_from_pairs(np.concatenate([p[0] for _, p in results]),
                             np.concatenate([p[1] for _, p in results]))
    pooled = drift.pooled(cfg.level_min)
    min_hits = min(r["single_leaf_hits"] for r in reps)
    agg = {"min_single_leaf_hits": min_hits, "pooled_drift": pooled, "bands": drift.bands(),
           "drift_pairs": drift.n_pairs}
    ok = min_hits >= cfg.min_hits and pooled["n"] >= 2 and pooled["ci"][1] < 0
    return reps, agg, ok


def _preset_phase_sweep(cfg):
    sweep = phase_transition_sweep(cfg.delay, cfg.k, cfg.alpha_grid, cfg.horizon, cfg.seeds,
                                   workers=cfg.workers)
    summ = sweep.summary()
    batteries = summ.pop("batteries")
    n = len(batteries)
    monotone = sum(b["monotone"] for b in batteries)
    low_div = all(b["labels"][0] == "diverging-leaves" for b in batteries)
    high_rec = all(b["labels"][-1] == "recurrent" for b in batteries)
    need = int(np.ceil(0.9 * n))
    agg = {**summ, "monotone_batteries": monotone, "batteries": n, "required_monotone": need,
           "smallest_alpha_diverging": low_div, "largest_alpha_recurrent": high_rec}
    return batteries, agg, low_div and high_rec and monotone >= need


def _preset_commuting(cfg):
    def job(seed):
        rep = commuting_check(cfg.delay, cfg.horizon, seed, cfg.k_list, cfg.g0)
        return {"seed": seed, **rep.summary()}

    reps = fan_out(job, cfg.seeds, cfg.workers)
    ok = all(r["horizon_ok"] and r["distance_monotone"] for r in reps)
    return reps, {"k": list(cfg.k_list)}, ok


PRESETS = {
    "nakamoto-rate": (_preset_nakamoto_rate, "longest-chain growth rate equals 1/E(chi)",
                      {"delay": "geometric:0.5", "construction": "nakamoto", "horizon": 10**6}),
    "nakamoto-clt": (_preset_nakamoto_clt, "longest-chain CLT with variance lambda^3 Var(chi)",
                     {"delay": "geometric:0.5", "construction": "nakamoto", "horizon": 10**4,
                      "replicas": 1000}),
    "regen-stats": (_preset_regen_stats, "regeneration density q and mean gap 1/q",
                    {"delay": "geometric:0.5", "horizon": 10**6}),
    "palm": (_preset_palm, "Palm inversion identity E h(tau) = q E H(gamma)",
             {"delay": "geometric:0.5", "horizon": 10**6}),
    "f1-growth": (_preset_f1_growth, "single-leaf attachment grows leaves like t^(1/2)",
                  {"delay": "geometric:0.5", "construction": "k:1", "horizon": 10**6, "replicas": 20}),
    "f2-stability": (_preset_f2_stability, "two-leaf attachment leaf count is positive recurrent",
                     {"delay": "geometric:0.75", "construction": "k:2", "horizon": 10**5,
                      "replicas": 20, "initial_leaves": 100}),
    "phase-sweep": (_preset_phase_sweep, "state-varying attachment phase transition in alpha",
                    {"delay": "geometric:0.75", "construction": "state-varying:2:1", "horizon": 10**5,
                     "replicas": 20}),
    "commuting": (_preset_commuting, "k-leaf graphs converge to the all-leaves graph as k grows",
                  {"delay": "geometric:0.75", "construction": "all", "horizon": 10**4}),
}


def cmd_experiment(args) -> int:
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    fn, claim, defaults = PRESETS[args.preset]
    cfg = build_config(args, {**defaults, "preset": args.preset})
    _check_memory(cfg)
    start = time.perf_counter()
    reps, agg, passed = fn(cfg)
    log.info("%s finished in %.1f s", args.preset, time.perf_counter() - start)
    result = _result(cfg, "experiment", reps, agg, passed, claim)
    path = _out_dir(cfg) / f"{args.preset}.json"
    write_json(result, path)
    print(f"{args.preset}: {'PASS' if passed else 'FAIL'} ({path})")
    return EXIT_OK if passed else EXIT_FAIL


# -- argument parsing --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--delay")
    p.add_argument("--construction")
    p.add_argument("--horizon", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--seed-base", "--seed", dest="seed_base", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir", "--out", dest="out_dir")
    p.add_argument("--initial-leaves", dest="initial_leaves", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acmsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lambda", help="closed-form constants of a delay law")
    p.add_argument("--delay", required=True)

    for name, help_ in [("simulate", "grow DAGs and write series, edges and summaries"),
                        ("regen", "detect regeneration intervals"),
                        ("analyze", "confirmation, height and drift diagnostics")]:
        _common(sub.add_parser(name, help=help_))

    p = sub.add_parser("experiment", help="run a preset and check its thresholds")
    p.add_argument("preset", help=", ".join(PRESETS))
    _common(p)

    p = sub.add_parser("export-dot", help="write one run as a DOT graph")
    _common(p)
    p.add_argument("--output", "-o", help="DOT file path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "lambda":
            return cmd_lambda(args)
        if args.command == "experiment":
            return cmd_experiment(args)
        cfg = build_config(args)
        _check_memory(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "regen":
            return cmd_regen(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        return cmd_export_dot(cfg, args.output)
    except (HorizonTooLargeForExact, ResourceBoundExceeded) as exc:
        print(f"acmsim: resource bound exceeded: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except MemoryError:
        print("acmsim: out of memory", file=sys.stderr)
        return EXIT_RESOURCE
    except ACMError as exc:
        print(f"acmsim: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
