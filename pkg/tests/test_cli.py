import json

import numpy as np
import pytest

from beatplan.cli import main
from beatplan.config import load_config
from beatplan.errors import BeatPlanError
from beatplan.partition import design_from_csv

SMALL_CONFIG = {
    "seed": 99,
    "side_length": 1.0,
    "grid_kind": "square-rook",
    "lag_order": 1,
    "horizon": 3,
    "k_target": 4,
    "anneal_t0": 2.0,
    "anneal_iterations": 300,
    "anneal_chains": 2,
    "report_years": [2019],
    "rho_grid": [-0.3, 0.0, 0.3],
    "synthetic": {
        "rows": 8,
        "cols": 8,
        "side_length": 1.0,
        "num_months": 8,
        "base_rate": 10.0,
        "rho": 0.2,
        "beta0": 0.3,
        "beta": [0.05, -0.02],
        "intercept": 1.0,
        "factor_names": ["population", "housing_units"],
        "factor_ranges": [[50.0, 150.0], [20.0, 60.0]],
        "block_rows": 2,
        "block_cols": 2,
        "noise": "poisson",
    },
}


@pytest.fixture()
def config_path(tmp_path):
    cfg = dict(SMALL_CONFIG)
    cfg["out_dir"] = str(tmp_path / "out")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_synth_then_run_all(config_path, capsys):
    assert main(["synth", "--config", config_path]) == 0
    assert main(["run-all", "--config", config_path]) == 0
    out_dir = load_config(config_path).out_dir
    for name in ("grid.geojson", "census_tensor.csv", "panel.csv", "model.json",
                 "rates.csv", "design_greedy.csv", "design_annealed.csv",
                 "design_annealed.geojson", "elbow.csv", "trace.csv",
                 "beat_table.csv", "summary.md"):
        assert (out_dir / name).exists(), name
    design = design_from_csv(str(out_dir / "design_annealed.csv"))
    assert design.num_beats == 4


def test_anneal_deterministic_across_runs(config_path, tmp_path):
    assert main(["synth", "--config", config_path]) == 0
    assert main(["run-all", "--config", config_path]) == 0
    out_dir = load_config(config_path).out_dir
    first = (out_dir / "design_annealed.csv").read_bytes()
    first_trace = (out_dir / "trace.csv").read_bytes()
    assert main(["anneal", "--config", config_path]) == 0
    assert (out_dir / "design_annealed.csv").read_bytes() == first
    assert (out_dir / "trace.csv").read_bytes() == first_trace


def test_count_only_prints_full_city_numbers(capsys):
    code = main(["export-mip", "--mode", "dense", "--count-only",
                 "--num-atoms", "1187", "--num-beats", "15"])
    assert code == 0
    out = capsys.readouterr().out
    assert "21,170,145" in out
    assert "63,421,410" in out


def test_export_mip_writes_file(config_path, tmp_path):
    assert main(["synth", "--config", config_path]) == 0
    assert main(["atomize", "--config", config_path]) == 0
    assert main(["workload", "--config", config_path]) == 0
    assert main(["export-mip", "--config", config_path, "--num-beats", "3"]) == 0
    out_dir = load_config(config_path).out_dir
    assert (out_dir / "model.lp").exists()
    assert (out_dir / "mip_counts.json").exists()


def test_missing_config_is_error(capsys):
    assert main(["atomize"]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["code"] == "missing-config"
    assert err["stage"] == "atomize"


def test_missing_input_reports_json(config_path, capsys):
    assert main(["fit", "--config", config_path]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["code"] == "missing-input"
    assert "paths" in err["context"]


def test_config_validation_lists_every_problem(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"side_length": -1, "grid_kind": "octagon",
                                "horizon": 0}))
    with pytest.raises(BeatPlanError) as err:
        load_config(str(path))
    problems = err.value.context["problems"]
    assert len(problems) >= 4  # seed, side_length, grid_kind, horizon
    assert any("seed" in p for p in problems)


def test_toml_config(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('seed = 5\nout_dir = "o"\nk_target = 3\n')
    cfg = load_config(str(path))
    assert cfg.seed == 5
    assert cfg.k_target == 3


def test_seed_override(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 1}))
    cfg = load_config(str(path), overrides={"seed": 42, "out_dir": None})
    assert cfg.seed == 42
