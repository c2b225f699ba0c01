import csv
import json
import math

import numpy as np
import pytest

from idet import experiment
from idet.channels import ChannelSet
from idet.cli import main
from idet.experiment import parse_config, read_results_csv, run_experiment, trial_seeds


def write_config(tmp_path, **overrides):
    cfg = {
        "schema_version": 1,
        "system": {"n_subcarriers": 2, "n_receivers": 2},
        "channels": {"source": "generated", "max_length": 1},
        "scenario": "siso-fair",
        "n_trials": 1,
        "seed": 5,
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_gen_channels_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["gen-channels", "-N", "8", "-J", "2", "-M", "2", "-L", "3", "--seed", "4", "-o", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    ch = ChannelSet.from_json(a)
    assert ch.taps.shape == (2, 2, 3) and ch.n_subcarriers == 8


def test_gen_channels_rejects_long_channel(capsys):
    assert main(["gen-channels", "-N", "2", "-L", "3"]) == 1
    assert "idet: error" in capsys.readouterr().err


def test_minimal_run_writes_one_row(tmp_path):
    path = write_config(tmp_path)
    assert main(["run", "-c", str(path), "-q"]) == 0
    out = tmp_path / "out"
    header, rows = read_results_csv(out / "results.csv")
    assert header == experiment.csv_header(2)
    assert len(rows) == 1 and rows[0].status == "converged"
    assert all(math.isfinite(v) for v in rows[0].rates + rows[0].dc)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["groups"][0]["n_feasible"] == 1


def test_infeasible_requirement_exits_two(tmp_path):
    path = write_config(tmp_path, sweep={"variable": "dc_requirement", "values": [50.0]})
    assert main(["run", "-c", str(path), "-q"]) == 2
    _, rows = read_results_csv(tmp_path / "out" / "results.csv")
    assert rows[0].status == "infeasible"


@pytest.mark.parametrize("change", [
    {"schema_version": 2},
    {"scenario": "miso-fair"},
    {"n_trials": 0},
    {"sweep": {"variable": "dc_requirement", "values": [0.2, 0.1]}},
    {"sweep": {"variable": "bandwidth", "values": [1.0]}},
    {"channels": {"source": "generated", "max_length": 3}},
    {"channels": {"source": "file", "path": "missing.json"}},
    {"bogus": 1},
])
def test_config_errors_exit_one(tmp_path, capsys, change):
    assert main(["run", "-c", str(write_config(tmp_path, **change))]) == 1
    assert "idet: error" in capsys.readouterr().err


def test_unreadable_config_exits_one(tmp_path, capsys):
    assert main(["run", "-c", str(tmp_path / "nope.json")]) == 1
    assert "idet: error" in capsys.readouterr().err


def test_csv_round_trip_is_exact(tmp_path):
    cfg = parse_config(write_config(tmp_path, n_trials=2).read_text())
    _, rows = run_experiment(cfg, output_dir=tmp_path / "o")
    _, back = read_results_csv(tmp_path / "o" / "results.csv")
    assert back == rows


def test_artifacts_embed_seed_and_hash(tmp_path):
    path = write_config(tmp_path)
    cfg = parse_config(path.read_text())
    run_experiment(cfg, output_dir=tmp_path / "o")
    first = (tmp_path / "o" / "results.csv").read_text().splitlines()[0]
    assert first == f"# config_hash={cfg.config_hash} seed=5"
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["config_hash"] == cfg.config_hash
    trace = json.loads((tmp_path / "o" / "traces" / "sweep000_trial0000.json").read_text())
    assert trace["seed"] == 5 and trace["config_hash"] == cfg.config_hash
    assert "wall_time" not in trace["report"]


def test_env_seed_overrides_config(tmp_path, monkeypatch):
    path = write_config(tmp_path)
    monkeypatch.setenv("IDET_SEED", "99")
    assert main(["run", "-c", str(path), "-q"]) == 0
    _, rows = read_results_csv(tmp_path / "out" / "results.csv")
    assert rows[0].seed == trial_seeds(99, 1)[0]
    monkeypatch.setenv("IDET_SEED", "x")
    assert main(["run", "-c", str(path), "-q"]) == 1


def test_parallel_jobs_keep_order_and_values(tmp_path):
    sweep = {"variable": "transmit_power", "values": [0.5, 1.0]}
    path = write_config(tmp_path, n_trials=2, sweep=sweep)
    assert main(["run", "-c", str(path), "-q", "-o", str(tmp_path / "a")]) == 0
    assert main(["run", "-c", str(path), "-q", "-j", "2", "-o", str(tmp_path / "b")]) == 0

    def strip(p):
        with open(p) as fh:
            recs = list(csv.reader(line for line in fh if not line.startswith("#")))
        return [r[:6] + r[7:] for r in recs]  # drop wall_ms
    a, b = strip(tmp_path / "a" / "results.csv"), strip(tmp_path / "b" / "results.csv")
    assert a == b
    assert [(r[2], r[0]) for r in a[1:]] == [("0.5", "0"), ("0.5", "1"), ("1", "0"), ("1", "1")]


def test_dsw_power_mode_scales_budget(tmp_path):
    system = {"n_subcarriers": 2, "n_receivers": 1, "sampling_factor": 4}
    path = write_config(tmp_path, system=system)
    cfg = parse_config(path.read_text())
    base = experiment.system_params(cfg, None).tx_power
    cfg.power_mode = "dsw-equivalent"
    assert experiment.system_params(cfg, None).tx_power == pytest.approx(4 * base)
    assert main(["run", "-c", str(path), "-q", "--power-mode", "dsw-equivalent"]) == 0
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["power_mode"] == "dsw-equivalent"


def test_file_channels_and_antenna_sweep(tmp_path):
    assert main(["gen-channels", "-N", "2", "-J", "2", "--seed", "1", "-o", str(tmp_path / "ch.json")]) == 0
    path = write_config(tmp_path, channels={"source": "file", "path": "ch.json"}, scenario="siso-sum")
    assert main(["run", "-c", str(path), "-q"]) == 0
    sweep = {"variable": "n_antennas", "values": [1, 2]}
    path = write_config(tmp_path, scenario="miso-sum", sweep=sweep,
                        system={"n_subcarriers": 1, "n_receivers": 2})
    assert main(["run", "-c", str(path), "-q"]) == 0
    _, rows = read_results_csv(tmp_path / "out" / "results.csv")
    assert [r.sweep_value for r in rows] == [1.0, 2.0]
    assert rows[1].objective >= rows[0].objective - 1e-6


def test_verify_model_passes_and_is_repeatable(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["verify", "model", "--seed", "3", "-o", str(a)]) == 0
    assert main(["verify", "model", "--seed", "3", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    assert report["pass"] and report["seed"] == 3


def test_trial_seeds_fit_in_63_bits():
    seeds = trial_seeds(7, 100)
    assert len(set(seeds)) == 100 and all(0 <= s < 2**63 for s in seeds)
    assert seeds == trial_seeds(7, 100)
    assert np.all(np.array(trial_seeds(7, 10)) == np.array(seeds[:10]))
