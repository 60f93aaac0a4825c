import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from softsensor import cli
from softsensor.cli import ConfigError, compare_traces, load_config, main, parse_config


def write_stream(path, N=180, seed=0):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(N, 3))
    y = Z @ [1.0, -0.5, 0.2] + 0.1 * rng.normal(size=N)
    rows = ["a,b,c,junk,y"] + [",".join(repr(float(v)) for v in (*z, 0.0, t)) for z, t in zip(Z, y)]
    path.write_text("\n".join(rows) + "\n")


def tiny_config(**over):
    cfg = {
        "name": "tiny",
        "seed": 3,
        "dataset": {"source": "file", "path": "stream.csv",
                    "columns": {"a": "process", "b": "process", "c": "process",
                                "junk": "ignore", "y": "target"}},
        "learners": ["pls", "lasso", "rvm"],
        "tuning": {"folds": 3, "repeats": 2, "lasso_grid": [0.01, 0.1, 1.0]},
        "offline": {"lags": [0, 1], "segments": 2, "train_size": 60, "test_size": 30},
        "online": {"schemes": ["MW", "JITL"], "lags": [0], "initial_ts": 100, "W": [30],
                   "nn": [30], "tuning_modes": ["TS", "W"]},
        "evaluation": {"reference": "pls"},
    }
    for key, val in over.items():
        if val is None:
            cfg.pop(key, None)
        elif isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **val}
        else:
            cfg[key] = val
    return cfg


@pytest.fixture
def project(tmp_path):
    write_stream(tmp_path / "stream.csv")

    def make(**over):
        path = tmp_path / "exp.yaml"
        path.write_text(yaml.safe_dump(tiny_config(**over)))
        return path
    return make


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ------------------------------------------------------------------ simulate

def test_simulate_writes_csv_and_manifest(tmp_path):
    assert main(["simulate", "--scenario", "1", "--reps", "1", "--out", str(tmp_path)]) == 0
    csv = (tmp_path / "data" / "scenario1_rep00.csv").read_text().splitlines()
    data = [ln for ln in csv if not ln.startswith("#")]
    assert len(data) == 701 and len(data[0].split(",")) == 20
    manifest = json.loads((tmp_path / "data" / "scenario1_manifest.json").read_text())
    assert manifest["reps"] == 1 and manifest["files"][0]["file"] == "scenario1_rep00.csv"
    assert any(ln.startswith("# config_hash=") for ln in csv)


def test_simulate_rejects_unknown_scenario(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--scenario", "9", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_simulate_list(capsys):
    assert main(["simulate", "--list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 9 and json.loads(lines[4])["id"] == 4


def test_output_root_precedence(monkeypatch, tmp_path):
    cfg = parse_config(tiny_config(output="from_cfg"))
    monkeypatch.setenv(cli.ENV_OUT, "from_env")
    assert cli.output_root("flag", cfg) == Path("flag")
    assert cli.output_root(None, cfg) == Path("from_cfg")
    assert cli.output_root(None, None) == Path("from_env")
    monkeypatch.delenv(cli.ENV_OUT)
    assert cli.output_root(None, None) == Path(cli.DEFAULT_OUT)


# -------------------------------------------------------------------- config

def test_config_errors_name_fields():
    bad = tiny_config(learners=["pls", "svm"], tuning={"folds": 1},
                      evaluation={"reference": "rvm", "gamma": 0.7}, extra=1)
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    text = "\n".join(exc.value.errors)
    for field in ("learners", "tuning.folds", "evaluation.gamma", "extra"):
        assert field in text


def test_missing_reference_learner():
    with pytest.raises(ConfigError, match="evaluation.reference"):
        parse_config(tiny_config(learners=["lasso", "rvm"]))


def test_at_least_one_scheme_required():
    with pytest.raises(ConfigError, match="at least one scheme"):
        parse_config(tiny_config(offline=None, online=None))


def test_window_larger_than_initial_set_rejected():
    with pytest.raises(ConfigError, match="online.W"):
        parse_config(tiny_config(online={"W": [120]}))


def test_hash_ignores_output_location():
    a = parse_config(tiny_config(output="x"))
    b = parse_config(tiny_config(output="y"))
    c = parse_config(tiny_config(seed=4))
    assert a.hash() == b.hash() != c.hash()
    assert a.with_seed(4).hash() == c.hash()


def test_validate_config(project, capsys):
    assert main(["validate-config", str(project())]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["config_hash"]) == 64
    assert main(["validate-config", str(project(tuning={"repeats": 0}))]) == 2
    assert "tuning.repeats" in capsys.readouterr().err


def test_segmentation_beyond_data_fails_before_fitting(project, tmp_path, capsys, monkeypatch):
    called = []
    monkeypatch.setattr(cli, "run_offline", lambda *a, **k: called.append(1))
    path = project(offline={"segments": 3, "train_size": 60, "test_size": 30})
    assert main(["offline", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "offline.segments" in capsys.readouterr().err
    assert not called


def test_missing_data_file(project, tmp_path, capsys):
    path = project(dataset={"path": "nowhere.csv"})
    assert main(["validate-config", str(path)]) == 2
    assert "not found" in capsys.readouterr().err


# ------------------------------------------------------------ experiments

@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    write_stream(base / "stream.csv")
    (base / "exp.yaml").write_text(yaml.safe_dump(tiny_config()))
    cfgp = str(base / "exp.yaml")
    codes = {}
    for tag, jobs in (("serial", "1"), ("again", "1"), ("parallel", "2")):
        for cmd in ("offline", "online"):
            codes[tag, cmd] = main([cmd, "--config", cfgp, "--out", str(base / tag), "--jobs", jobs])
    return base, codes


def test_runs_succeed(runs):
    _, codes = runs
    assert set(codes.values()) == {0}


def test_outputs_layout(runs):
    base, _ = runs
    files = tree(base / "serial")
    for name in ("reports/offline_report.csv", "reports/offline_report.json",
                 "reports/offline_report.txt", "reports/offline_selected.csv",
                 "plots/offline_rmse_vs_lag.csv", "plots/offline_pct_rmse_boxplot.csv",
                 "reports/online_report.csv", "reports/online_report.json",
                 "plots/online_rmse_vs_param.csv", "traces/pls_offline_seg1.csv",
                 "traces/pls-TS_MW_W30_n0.csv", "traces/lasso-W_JITL_NN30_n0.json",
                 "traces/rvm_MW_W30_n0.csv"):
        assert name in files, name
    assert "traces/rvm-W_MW_W30_n0.csv" not in files
    cfg_hash = load_config(base / "exp.yaml").hash()
    for name, body in files.items():
        if name.endswith(".csv"):
            assert f"# config_hash={cfg_hash}".encode() in body, name


def test_reruns_are_byte_identical(runs):
    base, _ = runs
    serial = tree(base / "serial")
    assert serial == tree(base / "again")
    assert serial == tree(base / "parallel")


def test_offline_selection_table(runs):
    base, _ = runs
    body = (base / "serial" / "reports" / "offline_selected.csv").read_text().splitlines()
    rows = [ln.split(",") for ln in body if not ln.startswith("#")][1:]
    assert len(rows) == 2 * 3
    assert all(r[2] in ("0", "1") for r in rows)


def test_compare_with_itself(runs, capsys):
    base, _ = runs
    t = base / "serial" / "traces" / "pls-TS_MW_W30_n0.csv"
    rep, chash = compare_traces([t, t.with_name("lasso-TS_MW_W30_n0.csv")])
    assert rep.reference == "pls-TS_MW_W30_n0"
    assert main(["compare", str(t)]) == 0
    assert "pls-TS_MW_W30_n0" in capsys.readouterr().out


def test_compare_refuses_mixed_configs(runs, tmp_path):
    base, _ = runs
    src = base / "serial" / "traces"
    a = tmp_path / "pls-TS_MW_W30_n0.csv"
    a.write_text((src / "pls-TS_MW_W30_n0.csv").read_text())
    b = tmp_path / "other.csv"
    b.write_text((src / "rvm_MW_W30_n0.csv").read_text().replace("config_hash=", "config_hash=x"))
    assert main(["compare", str(a), str(b)]) == 2
    assert main(["compare", str(a), str(b), "--force"]) == 0


def test_compare_length_mismatch(runs, tmp_path):
    base, _ = runs
    src = (base / "serial" / "traces" / "pls-TS_MW_W30_n0.csv").read_text().splitlines()
    (tmp_path / "full.csv").write_text("\n".join(src) + "\n")
    (tmp_path / "short.csv").write_text("\n".join(src[:-5]) + "\n")
    assert main(["compare", str(tmp_path), "--reference", "full"]) == 2
