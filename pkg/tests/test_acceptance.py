"""End-to-end acceptance checks, driven through the command-line entry point."""

import json
import time

import numpy as np
import pytest

from acmsim.cli import main

pytestmark = pytest.mark.slow


_lines = []


@pytest.fixture(autouse=True)
def _collect(acceptance_lines):
    yield
    acceptance_lines.extend(_lines)
    _lines.clear()


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.delenv("ACMSIM_OUTPUT_DIR", raising=False)
    return tmp_path


def report(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    print(line)
    _lines.append(line)
    assert ok, line


def cli(*argv):
    start = time.perf_counter()
    code = main(list(map(str, argv)))
    return code, time.perf_counter() - start


def load(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_criterion_01_growth_rate(out, capsys):
    details, ok = [], True
    for delay, rounded in (("geometric:0.5", 0.609148), ("geometric:0.75", 0.789964)):
        d = out / delay.replace(":", "_")
        code, secs = cli("experiment", "nakamoto-rate", "--delay", delay, "--out", d)
        agg = load(d / "nakamoto-rate.json")["aggregate"]
        good = code == 0 and agg["max_rel_error"] <= 0.01 and secs <= 5.0
        good &= abs(agg["lambda"] - rounded) < 1e-5
        ok &= good
        details.append(f"{delay} rel_err={agg['max_rel_error']:.2e} lambda={agg['lambda']:.6f} {secs:.1f}s")
    report(1, ok, "; ".join(details))


def test_criterion_02_height_equals_dag(out):
    code, _ = cli("analyze", "--delay", "geometric:0.5", "--construction", "nakamoto", "--horizon", 10_000,
                  "--replicas", 10, "--set", "confirm=false", "--out", out)
    res = load(out / "analysis.json")
    flags = [r["height_dag_equal"] for r in res["replicas"]]
    report(2, code == 0 and len(flags) == 10 and all(flags), f"{sum(flags)}/10 seeds exactly equal at T=1e4")


def test_criterion_03_chi_gap_law(out):
    code, _ = cli("analyze", "--delay", "geometric:0.5", "--construction", "nakamoto", "--horizon", 100_000,
                  "--replicas", 10, "--out", out)
    reps = load(out / "analysis.json")["replicas"]
    pvals = [r["chi_gof_pvalue"] for r in reps]
    enough = all(r["chi_gaps"] >= 1000 for r in reps)
    passing = sum(p is not None and p > 0.01 for p in pvals)
    report(3, code == 0 and enough and passing >= 8,
           f"p > 0.01 on {passing}/10 seeds, min gaps {min(r['chi_gaps'] for r in reps)}")


def test_criterion_04_clt(out):
    code, secs = cli("experiment", "nakamoto-clt", "--out", out)
    agg = load(out / "nakamoto-clt.json")["aggregate"]
    report(4, code == 0 and agg["ks_distance"] <= 0.06 and secs <= 120,
           f"KS={agg['ks_distance']:.4f} over 1000 replicas, {secs:.1f}s")


def test_criterion_05_regeneration_density(out):
    code, _ = cli("experiment", "regen-stats", "--out", out)
    res = load(out / "regen-stats.json")
    agg, rep = res["aggregate"], res["replicas"][0]
    ok = code == 0 and agg["max_rel_error"] <= 0.02 and abs(agg["q"] - 0.144394) < 1e-6
    report(5, ok, f"density={rep['density']:.6f} q={agg['q']:.6f} gap_mean={rep['gap_mean']:.4f} "
                  f"worst rel_err={agg['max_rel_error']:.2e}")


def test_criterion_06_palm(out):
    code, _ = cli("experiment", "palm", "--out", out)
    agg = load(out / "palm.json")["aggregate"]
    report(6, code == 0 and agg["max_rel_discrepancy"] <= 0.05,
           f"relative discrepancy {agg['max_rel_discrepancy']:.2e}")


def test_criterion_07_single_leaf_scaling(out):
    code, _ = cli("experiment", "f1-growth", "--out", out)
    agg = load(out / "f1-growth.json")["aggregate"]
    ok = code == 0 and 0.45 <= agg["slope"] <= 0.55 and agg["bound_ok"]
    report(7, ok, f"slope={agg['slope']:.4f} bound_ok={agg['bound_ok']}")


def test_criterion_08_two_leaf_stability(out):
    code, _ = cli("experiment", "f2-stability", "--out", out)
    agg = load(out / "f2-stability.json")["aggregate"]
    pooled = agg["pooled_drift"]
    ok = code == 0 and agg["min_single_leaf_hits"] >= 10 and pooled["ci"][1] < 0
    report(8, ok, f"min hits={agg['min_single_leaf_hits']} drift(l>=20)={pooled['mean']:.3f} "
                  f"CI=[{pooled['ci'][0]:.3f}, {pooled['ci'][1]:.3f}] n={pooled['n']}")


def test_criterion_09_confirmation_cross_check(out):
    details, ok = [], True
    for delay, construction in (("geometric:0.5", "nakamoto"), ("geometric:0.75", "k:2")):
        d = out / construction.replace(":", "_")
        code, _ = cli("analyze", "--delay", delay, "--construction", construction, "--horizon", 5000,
                      "--replicas", 10, "--out", d)
        reps = load(d / "analysis.json")["replicas"]
        contained = sum(r["anchor_subset_of_exact"] for r in reps)
        certified = [r["confirmed_anchor"] for r in reps]
        ok &= code == 0 and contained == 10 and min(certified) > 0
        details.append(f"{construction}: {contained}/10 contained, certified per seed {min(certified)}..{max(certified)}")
    report(9, ok, "; ".join(details))


def test_criterion_10_commuting(out):
    code, _ = cli("experiment", "commuting", "--out", out)
    rep = load(out / "commuting.json")["replicas"][0]
    ok = code == 0 and rep["horizon_ok"] and rep["distance_monotone"]
    report(10, ok, f"horizons={rep['equality_horizon']} distances={np.round(rep['distance'], 4).tolist()}")


def test_criterion_11_phase_transition(out):
    code, _ = cli("experiment", "phase-sweep", "--out", out)
    agg = load(out / "phase-sweep.json")["aggregate"]
    ok = code == 0
    report(11, ok, f"smallest alpha diverging={agg['smallest_alpha_diverging']} "
                   f"largest alpha recurrent={agg['largest_alpha_recurrent']} "
                   f"monotone {agg['monotone_batteries']}/{agg['batteries']}")
