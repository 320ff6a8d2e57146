import json

import pytest

from acmsim.cli import OUTPUT_ENV, PRESETS, SCHEMA, ExperimentConfig, main, parse_config_text
from acmsim.errors import ConfigError


@pytest.fixture(autouse=True)
def _no_env(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)


def load(path):
    return json.loads(path.read_text(encoding="utf-8"))


# -- lambda ------------------------------------------------------------------------------


def test_lambda_deterministic(capsys):
    assert main(["lambda", "--delay", "det:1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lambda"] == 1.0 and out["q"] == 1.0 and out["clt_variance"] == 0.0
    assert out["schema"] == SCHEMA


def test_lambda_geometric(capsys):
    assert main(["lambda", "--delay", "geometric:0.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lambda"] == pytest.approx(0.6091497110662286, rel=1e-12)
    assert out["q"] == pytest.approx(0.14439404754330121, rel=1e-9)


def test_lambda_malformed(capsys):
    assert main(["lambda", "--delay", "geometric:1.5"]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_subcommand():
    assert main([]) == 2


# -- simulate ----------------------------------------------------------------------------


def test_simulate_writes_outputs(tmp_path):
    args = ["simulate", "--delay", "geometric:0.5", "--construction", "k:2", "--horizon", "300",
            "--replicas", "2", "--out-dir", str(tmp_path), "--set", "dot=true"]
    assert main(args) == 0
    names = {p.name for p in tmp_path.iterdir()}
    for seed in (0, 1):
        for stem in ("series", "edges", "regen", "confirmed"):
            assert f"{stem}_seed{seed}.csv" in names
        assert f"graph_seed{seed}.dot" in names
    summary = load(tmp_path / "summary.json")
    assert summary["schema"] == SCHEMA and len(summary["replicas"]) == 2
    assert "workers" not in summary["config"]
    assert (tmp_path / "graph_seed0.dot").read_text().startswith("digraph")


def test_simulate_is_reproducible(tmp_path):
    outs = []
    for name, workers in (("a", "1"), ("b", "4")):
        d = tmp_path / name
        assert main(["simulate", "--delay", "geometric:0.75", "--construction", "mixture:1=0.9,2=0.1",
                     "--horizon", "500", "--replicas", "4", "--workers", workers, "--out", str(d)]) == 0
        outs.append(d)
    a, b = outs
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_simulate_config_errors(tmp_path, capsys):
    assert main(["simulate", "--horizon", "0", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--construction", "k:0", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--set", "nonsense=1", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert capsys.readouterr().err.count("acmsim: error:") == 4


def test_resource_bound_exit(tmp_path, capsys):
    assert main(["simulate", "--horizon", "100000", "--set", "memory_limit_mb=1", "--out", str(tmp_path)]) == 3
    assert "resource bound" in capsys.readouterr().err


def test_exact_confirmation_auto_disabled(tmp_path, caplog):
    assert main(["simulate", "--delay", "geometric:0.5", "--construction", "nakamoto", "--horizon", "25000",
                 "--out", str(tmp_path)]) == 0
    assert not (tmp_path / "confirmed_seed0.csv").exists()
    assert "exact confirmation disabled" in caplog.text


# -- config precedence -------------------------------------------------------------------


def test_parse_config_text():
    cfg = parse_config_text("# comment\ndelay = geometric:0.75\nhorizon = 1e4  # trailing\nk-list = 2,4\n\nconfirm=off\n")
    assert cfg == {"delay": "geometric:0.75", "horizon": 10_000, "k_list": (2, 4), "confirm": False}
    with pytest.raises(ConfigError):
        parse_config_text("horizon = many")
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign")


def test_config_file_and_overrides(tmp_path, monkeypatch):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("delay = geometric:0.75\nconstruction = k:2\nhorizon = 200\nreplicas = 3\n")
    env_dir = tmp_path / "env"
    monkeypatch.setenv(OUTPUT_ENV, str(env_dir))
    assert main(["regen", "--config", str(cfg_file), "--horizon", "400", "--set", "replicas=2"]) == 0
    res = load(env_dir / "regen.json")
    assert res["config"]["delay"] == "geometric:0.75"
    assert res["config"]["horizon"] == 400
    assert [r["seed"] for r in res["replicas"]] == [0, 1]
    flag_dir = tmp_path / "flag"
    assert main(["regen", "--config", str(cfg_file), "--out", str(flag_dir)]) == 0
    assert (flag_dir / "regen.json").exists()


def test_defaults_validate():
    assert ExperimentConfig().validate().seeds == [0]
    with pytest.raises(ConfigError):
        ExperimentConfig(replicas=0).validate()


# -- analyze / export-dot ----------------------------------------------------------------


def test_analyze_nakamoto(tmp_path):
    assert main(["analyze", "--delay", "geometric:0.5", "--construction", "nakamoto", "--horizon", "3000",
                 "--replicas", "2", "--out", str(tmp_path)]) == 0
    res = load(tmp_path / "analysis.json")
    assert res["aggregate"]["all_height_dag_equal"]
    assert res["aggregate"]["all_anchor_subset_of_exact"]
    assert all(r["anchor_method"] == "anchor" for r in res["replicas"])


def test_analyze_leaf_rule(tmp_path):
    assert main(["analyze", "--delay", "geometric:0.75", "--construction", "k:2", "--horizon", "3000",
                 "--out", str(tmp_path)]) == 0
    rep = load(tmp_path / "analysis.json")["replicas"][0]
    assert rep["anchor_method"] == "cut-vertex" and rep["anchor_subset_of_exact"]
    assert rep["single_leaf_hits"] >= 1


def test_export_dot(tmp_path):
    target = tmp_path / "g.dot"
    assert main(["export-dot", "--delay", "geometric:0.5", "--construction", "k:2", "--horizon", "100",
                 "-o", str(target)]) == 0
    text = target.read_text()
    assert text.startswith("digraph") and text.rstrip().endswith("}")


# -- experiment --------------------------------------------------------------------------


def test_unknown_preset(tmp_path):
    assert main(["experiment", "no-such-preset", "--out", str(tmp_path)]) == 2


def test_presets_have_claims():
    for name, (fn, claim, defaults) in PRESETS.items():
        assert callable(fn) and claim and "delay" in defaults


def test_commuting_preset(tmp_path, capsys):
    assert main(["experiment", "commuting", "--horizon", "5000", "--out", str(tmp_path)]) == 0
    assert "commuting: PASS" in capsys.readouterr().out
    res = load(tmp_path / "commuting.json")
    assert res["passed"] and res["claim"]


def test_small_experiment_fail_exit(tmp_path, capsys):
    # a horizon far too short for the rate tolerance on a slow law
    code = main(["experiment", "nakamoto-rate", "--delay", "geometric:0.05", "--horizon", "50",
                 "--out", str(tmp_path)])
    res = load(tmp_path / "nakamoto-rate.json")
    assert code == (0 if res["passed"] else 1)
    assert res["aggregate"]["tolerance"] == 0.01
