import csv
import json
import subprocess
import sys

import pytest

from isalt.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, main
from isalt.config import ExperimentConfig, SchemeSpec, load_config, preset
from isalt.exceptions import ConfigError
from isalt.experiment import gap_seed

TINY = """
output = "out"
[system]
benchmark = "double-well-1d"
[data]
dt = 1e-3
long_steps = 20000
M = 4
horizon = 4.0
gaps = [10, 20, 40]
seed = 3
[inference]
families = ["is-rk4", "is-ssbe", "is-em-c0"]
[evaluate]
sim_steps = 4000
max_lag = 20
bins = 30
[study.convergence]
family = "is-rk4"
gap = 20
[study.blowup_scan]
schemes = ["plain-rk4", "is-rk4"]
steps = 500
seeds = 2
"""

STAGES = [["gen-data"], ["infer"], ["evaluate"], ["study", "convergence"],
          ["study", "residual-order"], ["study", "blowup-scan"], ["report"]]


def write_config(tmp_path, text=TINY):
    path = tmp_path / "tiny.toml"
    path.write_text(text)
    return path


def run_all(cfg_path, capsys):
    for stage in STAGES:
        assert main([*stage, "-c", str(cfg_path)]) == EXIT_OK, stage
    capsys.readouterr()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    cfg = write_config(root)
    for stage in STAGES:
        assert main([*stage, "-c", str(cfg)]) == EXIT_OK, stage
    return root


def test_scheme_labels():
    spec = SchemeSpec.parse("IS-RK4-c0")
    assert (spec.family, spec.include_c0, spec.plain, spec.label) == ("rk4", True, False,
                                                                      "is-rk4-c0")
    assert SchemeSpec.parse("plain-ssbe").plain
    for bad in ("rk4", "is-heun", "plain-em-c0"):
        with pytest.raises(ConfigError):
            SchemeSpec.parse(bad)


def test_presets():
    desk = load_config(preset_name="desk", system="double-well-1d")
    assert desk.M == 100 and desk.gaps == [10, 20, 40, 80, 120, 160, 200]
    assert desk.total_steps % 240 == 0 and desk.total_steps <= 100_000
    paper = load_config(preset_name="paper", system="lorenz-3d")
    assert paper.long_steps == 6_000_000 and paper.dt == 5e-4
    with pytest.raises(ConfigError):
        preset("huge", "double-well-1d")
    with pytest.raises(ConfigError):
        load_config(preset_name="desk")


def test_file_overrides_preset(tmp_path):
    path = write_config(tmp_path, '[system]\nbenchmark = "gradient-2d"\n[data]\nM = 7\n')
    cfg = load_config(path, preset_name="desk")
    assert cfg.M == 7 and cfg.dt == 2e-3
    assert cfg.system.name == "gradient-2d"
    assert cfg.output == tmp_path / "runs/gradient-2d-desk"


def test_custom_system_definition():
    doc = {"system": {"name": "ou", "variables": ["x"], "drift": ["-x"], "diffusion": [[1.0]],
                      "potential": "x**2", "beta": 1.0, "x0": [0.0]},
           "data": {"dt": 0.01, "long_steps": 100, "M": 2, "horizon": 1.0, "gaps": [1, 5]}}
    cfg = ExperimentConfig.from_dict(doc)
    assert cfg.system.d == 1 and cfg.initial_state() == [0.0]


@pytest.mark.parametrize("patch,match", [
    ({"gaps": []}, "empty"),
    ({"gaps": [20, 10]}, "ascending"),
    ({"dt": -1.0}, "dt"),
    ({"horizon": 0.01}, "lcm"),
    ({"x0": [0.0, 1.0]}, "x0"),
])
def test_invalid_configs(patch, match):
    doc = preset("desk", "double-well-1d")
    doc["data"].update(patch)
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_dict(doc)


def test_invalid_family_and_missing_key():
    doc = preset("desk", "double-well-1d")
    doc["inference"]["families"] = ["plain-rk4"]
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)
    del doc["data"]
    with pytest.raises(ConfigError, match="data"):
        ExperimentConfig.from_dict(doc)


def test_gap_seeds_are_distinct_and_stable():
    seeds = [gap_seed(1, g) for g in (10, 20, 40)]
    assert len(set(seeds)) == 3 and gap_seed(1, 10) == seeds[0]


def test_pipeline_artifacts(pipeline):
    out = pipeline / "out"
    man = json.loads((out / "manifest.json").read_text())["artifacts"]
    for rel in ("data/long.bin", "data/gap0010.bin", "schemes/is-rk4_gap0020.json",
                "estimators.csv", "eval/tvd.csv", "eval/blowup.csv", "eval/summary.json",
                "study/convergence.csv", "study/residual_order.csv", "study/blowup_scan.csv",
                "report.json"):
        assert rel in man, rel
        assert (out / rel).exists()
    rows = list(csv.DictReader(open(out / "eval/tvd.csv")))
    assert len(rows) == 3 * 3
    assert all(0.0 <= float(r["tvd"]) <= 1.0 for r in rows)
    report = json.loads((out / "report.json").read_text())
    assert "tvd-table" in report["tables"] and "evaluation-summary" in report["summaries"]


def test_pipeline_is_deterministic(pipeline, tmp_path, capsys):
    cfg = write_config(tmp_path)
    run_all(cfg, capsys)
    a = json.loads((pipeline / "out/manifest.json").read_text())["artifacts"]
    b = json.loads((tmp_path / "out/manifest.json").read_text())["artifacts"]
    assert {k: v["sha256"] for k, v in a.items() if k != "report.json"} == \
        {k: v["sha256"] for k, v in b.items() if k != "report.json"}


def test_simulate_command(pipeline, tmp_path, capsys):
    scheme = pipeline / "out/schemes/is-ssbe_gap0020.json"
    out = tmp_path / "sim.bin"
    rc = main(["simulate", "-s", str(scheme), "-n", "300", "--seed", "4", "-o", str(out),
               "-M", "2", "--record-every", "3"])
    assert rc == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["blown_up"] == [False, False]
    from isalt.io import read_dataset
    ds = read_dataset(out)
    assert (ds.M, ds.N, ds.gap) == (2, 100, 3)
    assert (tmp_path / "sim.bin.summary.json").exists()


def test_exit_codes(pipeline, tmp_path, capsys):
    assert main(["infer", "-c", str(tmp_path / "absent.toml")]) == EXIT_CONFIG
    assert main(["infer"]) == EXIT_CONFIG
    assert main(["simulate", "-s", str(tmp_path / "none.json"), "-n", "5"]) == EXIT_MISSING
    assert main(["simulate", "-s", "x.json", "-n", "0"]) == EXIT_CONFIG
    # inference before data generation
    cfg = write_config(tmp_path)
    assert main(["infer", "-c", str(cfg)]) == EXIT_MISSING
    # a tampered artifact is detected by its checksum
    assert main(["gen-data", "-c", str(cfg)]) == EXIT_OK
    data = tmp_path / "out/data/gap0010.bin"
    data.write_bytes(data.read_bytes()[:-8] + b"\0" * 8)
    assert main(["infer", "-c", str(cfg)]) == EXIT_MISSING
    err = capsys.readouterr().err
    assert "checksum" in err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "isalt.cli", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0
    assert "gen-data" in proc.stdout and "study" in proc.stdout
