import copy
import json
import os

import pytest

from csi_djscc.cli import build_parser, main, _resolve_config
from csi_djscc.errors import ConfigError, StageError
from csi_djscc.experiments import (ExperimentConfig, list_presets, load_config,
                                   load_preset, run_experiment)

TINY = {
    "name": "tiny",
    "profile": "desk",
    "seed": 0,
    "dataset": {"n_train": 24, "n_val": 6, "n_test": 6},
    "train": {"max_epochs": 1, "batch_size": 8, "plateau_patience": 1},
    "eval": {"grid_db": [-5.0, 5.0], "batch_size": 64},
    "models": [{"name": "adjscc", "variant": "adjscc",
                "snr_policy": {"kind": "uniform", "low_db": -10.0, "high_db": 10.0}}],
    "baselines": [
        {"kind": "sscc_ideal", "design_snr_db": 0.0, "bits": 4,
         "bitlevel": {"offset_epochs": 1, "joint_epochs": 1}},
        {"kind": "envelope"},
    ],
}


@pytest.fixture()
def sandbox(tmp_path, monkeypatch):
    monkeypatch.setenv("CSI_DJSCC_OUT_ROOT", str(tmp_path))
    return tmp_path


def tiny_cfg(**overrides):
    d = copy.deepcopy(TINY)
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


def test_from_dict_validation():
    cases = [
        ({"name": "x", "bogus": 1}, "unknown experiment"),
        ({}, "name"),
        ({"name": "  "}, "name"),
        ({"name": "x", "models": "nope"}, "list"),
        ({"name": "x", "models": [{"name": "a", "wat": 1}]}, "model keys"),
        ({"name": "x", "models": [{"variant": "adjscc"}]}, "needs a 'name'"),
        ({"name": "x", "models": [{"name": "a"}, {"name": "a"}]}, "unique"),
        ({"name": "x", "baselines": [{"kind": "sscc_ideal", "design_snr_db": 0,
                                      "wat": 1}]}, "baseline keys"),
        ({"name": "x", "baselines": [{"kind": "magic"}]}, "kind"),
        ({"name": "x", "baselines": [{"kind": "sscc_ideal"}]}, "design_snr_db"),
        ({"name": "x", "train": {"lr": 1}}, "train keys"),
        ({"name": "x", "dataset": {"rows": 4}}, "dataset keys"),
        ({"name": "x", "eval": {"snrs": []}}, "eval keys"),
    ]
    for payload, fragment in cases:
        with pytest.raises(ConfigError, match=fragment):
            ExperimentConfig.from_dict(payload)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(["not", "a", "dict"])


def test_config_hash_behaviour():
    a = tiny_cfg()
    b = tiny_cfg()
    assert a.config_hash == b.config_hash
    assert len(a.config_hash) == 16
    assert int(a.config_hash, 16) >= 0
    assert tiny_cfg(seed=1).config_hash != a.config_hash
    # out_dir is a deployment detail, not part of the scientific identity
    assert tiny_cfg(out_dir="elsewhere").config_hash == a.config_hash


def test_resolved_scenario_and_overrides():
    cfg = tiny_cfg(seed=9)
    sc = cfg.resolved_scenario()
    assert sc.n_sub == 64 and sc.n_tx == 16 and sc.seed == 9
    cfg2 = tiny_cfg(scenario={"n_clusters": 2, "paths_per_cluster": 4})
    sc2 = cfg2.resolved_scenario()
    assert sc2.n_paths == 8
    with pytest.raises(ConfigError):
        tiny_cfg(scenario={"warp_factor": 9}).resolved_scenario()


def test_out_dir_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv("CSI_DJSCC_OUT_ROOT", raising=False)
    assert tiny_cfg().resolve_out_dir() == os.path.join("runs", "tiny")
    monkeypatch.setenv("CSI_DJSCC_OUT_ROOT", str(tmp_path))
    assert tiny_cfg().resolve_out_dir() == str(tmp_path / "runs" / "tiny")
    assert tiny_cfg(out_dir="custom").resolve_out_dir() == str(tmp_path / "custom")
    absolute = str(tmp_path / "abs")
    assert tiny_cfg(out_dir=absolute).resolve_out_dir() == absolute


def test_eval_seed_defaulting():
    assert tiny_cfg(seed=7).eval_seed() == 7
    cfg = tiny_cfg(seed=7, eval={"seed": 3})
    assert cfg.eval_seed() == 3


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    good = tmp_path / "good.json"
    good.write_text(json.dumps(TINY))
    assert load_config(str(good)).name == "tiny"


def test_presets_load():
    names = list_presets()
    assert {"smoke", "validity", "adaptability", "ablation", "generality"} <= set(names)
    for name in names:
        cfg = load_preset(name)
        assert cfg.name == name
    with pytest.raises(ConfigError):
        load_preset("nope")


def test_full_run_artifacts(sandbox):
    cfg = tiny_cfg()
    out = run_experiment(cfg)
    man = out["manifest"]
    assert man["stages_run"] == ["data", "train", "sweep", "report"]
    # manifest lists declared models; table models live under autoencoder_table
    assert man["models"] == ["adjscc"]
    assert list(man["autoencoder_table"]) == ["4"]

    root = cfg.resolve_out_dir()
    for rel in ("experiment.json", "results.json", "report.md",
                "models/adjscc/model.json", "models/adjscc/train_report.json",
                "models/table-m4/model.json", "tables/autoencoder_nmse.json"):
        assert os.path.isfile(os.path.join(root, rel)), rel
    assert os.path.isfile(os.path.join(root, "nmse_tiny.png"))

    labels = [r.label for r in out["results"]]
    assert labels == ["adjscc", "sscc-ideal-0dB", "sscc-ideal-envelope"]
    ideal, env = out["results"][1], out["results"][2]
    assert env.nmse_db == ideal.nmse_db  # envelope over a single member curve
    assert ideal.meta["m"] == 4
    assert all(r.family == "tiny" for r in out["results"])

    with open(os.path.join(root, "experiment.json")) as fh:
        on_disk = json.load(fh)
    assert on_disk["config_hash"] == cfg.config_hash


def test_rerun_uses_cache_and_reproduces(sandbox):
    cfg = tiny_cfg(name="rerun")
    out1 = run_experiment(cfg)
    results_path = out1["manifest"]["results_path"]
    first = open(results_path, "rb").read()
    report_mtime = os.path.getmtime(
        os.path.join(cfg.resolve_out_dir(), "models", "adjscc", "train_report.json"))

    out2 = run_experiment(cfg)
    assert open(results_path, "rb").read() == first
    # cached bundles are reloaded, not retrained
    assert out2["reports"] == {}
    assert os.path.getmtime(os.path.join(
        cfg.resolve_out_dir(), "models", "adjscc",
        "train_report.json")) == report_mtime

    out3 = run_experiment(cfg, force=True)
    assert "adjscc" in out3["reports"]
    assert open(results_path, "rb").read() == first


def test_partial_stages(sandbox):
    cfg = tiny_cfg(name="partial")
    out = run_experiment(cfg, last_stage="data")
    assert out["manifest"]["stages_run"] == ["data"]
    assert "bundles" not in out and "results" not in out
    out = run_experiment(cfg, last_stage="train")
    assert "results" not in out and "bundles" in out
    with pytest.raises(ConfigError):
        run_experiment(cfg, last_stage="deploy")


def test_dataset_dir_persistence_and_mismatch(sandbox):
    cfg = tiny_cfg(name="persist",
                   dataset={"dir": "data/persist", "n_train": 24, "n_val": 6,
                            "n_test": 6})
    out = run_experiment(cfg, last_stage="data")
    ds_dir = out["manifest"]["dataset_dir"]
    assert os.path.isfile(os.path.join(ds_dir, "manifest.json"))
    # reuse succeeds when the config matches
    run_experiment(cfg, last_stage="data")
    # a mismatching config must refuse the stored dataset
    bigger = tiny_cfg(name="persist",
                      dataset={"dir": "data/persist", "n_train": 48, "n_val": 6,
                               "n_test": 6})
    with pytest.raises(StageError) as info:
        run_experiment(bigger, last_stage="data")
    assert info.value.stage == "data"


def test_missing_dataset_without_generation(sandbox):
    cfg = tiny_cfg(name="nogen",
                   dataset={"dir": "data/nogen", "n_train": 24, "n_val": 6,
                            "n_test": 6, "generate_if_missing": False})
    with pytest.raises(StageError) as info:
        run_experiment(cfg, last_stage="data")
    assert info.value.stage == "data"


def test_cli_argument_resolution():
    parser = build_parser()
    args = parser.parse_args(["train", "--preset", "smoke", "--seed", "5",
                              "--out-dir", "X", "--profile", "full"])
    cfg = _resolve_config(args)
    assert cfg.seed == 5 and cfg.out_dir == "X" and cfg.profile == "full"
    with pytest.raises(ConfigError):
        _resolve_config(parser.parse_args(["train"]))
    with pytest.raises(ConfigError):
        _resolve_config(parser.parse_args(
            ["train", "--preset", "smoke", "--config", "x.json"]))


def test_cli_list_presets_and_help(capsys):
    assert main(["--list-presets"]) == 0
    listed = capsys.readouterr().out.split()
    assert "smoke" in listed
    assert main([]) == 2


def test_cli_exit_codes(sandbox, tmp_path, capsys):
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(json.dumps(TINY))

    assert main(["generate-data", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "finished stages: data" in out

    assert main(["run", "--config", str(tmp_path / "absent.json")]) == 2

    broken = dict(TINY, name="broken",
                  dataset={"dir": "data/broken", "n_train": 24, "n_val": 6,
                           "n_test": 6, "generate_if_missing": False})
    broken_path = tmp_path / "broken.json"
    broken_path.write_text(json.dumps(broken))
    assert main(["generate-data", "--config", str(broken_path)]) == 3


def test_cli_full_run_and_evaluate(sandbox, tmp_path, capsys):
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(json.dumps(dict(TINY, name="cli-run")))

    assert main(["run", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "finished stages: data, train, sweep, report" in out

    assert main(["evaluate", "--config", str(cfg_path), "--snr-db", "5"]) == 0
    out = capsys.readouterr().out
    assert "adjscc: NMSE =" in out and "snr=5" in out

    # report re-renders from the existing results.json without retraining
    assert main(["report", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "rendered from existing" in out
