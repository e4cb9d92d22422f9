import json

import pytest

import app.cli.commands as commands
from app.cli.commands import EXIT_DATA, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run_command


@pytest.fixture
def tiny_config(tmp_path):
    document = {
        "seed": 3,
        "output_dir": str(tmp_path / "runs"),
        "dataset": {"kind": "two_spirals", "n_per_class": 30},
        "network": {
            "input_shape": [2],
            "layers": [
                {"kind": "fully_connected", "in_dim": 2, "out_dim": 6},
                {"kind": "activation", "activation": "tanh"},
                {"kind": "fully_connected", "in_dim": 6, "out_dim": 2},
            ],
        },
        "pb": {"pool_size": 2, "candidate_epochs": 2, "max_normal_epochs": 3, "normal_patience": 2,
               "dendrite_patience": 1, "batch_size": 16, "max_cycles": 1, "stop_on_plateau": False},
        "sweep": {"width_multipliers": [1.0], "dendrite_cycles": [0, 1]},
    }
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(document))
    return path


def test_cost_prints_rounded_value(tmp_path, capsys):
    code = run_command(["cost", "--hourly", "0.31", "--tps", "1581885", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0] == "0.0544"
    assert (tmp_path / "cost.txt").exists() and (tmp_path / "cost.csv").exists()


def test_cost_replicas_and_speedup(tmp_path, capsys):
    code = run_command(["cost", "--hourly", "0.17", "--tps", "16319841", "--target", "16000000",
                        "--baseline-tps", "107001", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ["0.0029", "replicas: 1", "speedup: 152.52"]


def test_cost_reference_table(tmp_path, capsys):
    assert run_command(["cost", "--reference", "--pdf", "--output-dir", str(tmp_path)]) == EXIT_OK
    assert "Reduced Model with Dendrites" in capsys.readouterr().out
    assert (tmp_path / "cost.pdf").exists()


def test_cost_rejects_zero_throughput(tmp_path, capsys):
    assert run_command(["cost", "--hourly", "1", "--tps", "0", "--output-dir", str(tmp_path)]) == EXIT_USAGE
    assert "must be positive" in capsys.readouterr().err


def test_cost_needs_inputs(tmp_path):
    assert run_command(["cost", "--output-dir", str(tmp_path)]) == EXIT_USAGE


@pytest.mark.parametrize("command, flag", [
    ("train", "--cycles"),
    ("sweep", "--widths"),
    ("cost", "--hourly"),
    ("bench", "--batch-sizes"),
    ("gen-data", "--kind"),
    ("verify", "--seed"),
])
def test_help_exits_zero(command, flag, capsys):
    assert run_command([command, "--help"]) == EXIT_OK
    out = capsys.readouterr().out
    assert flag in out and "default" in out


def test_unknown_subcommand():
    assert run_command(["fly"]) == EXIT_USAGE


def test_missing_config_names_the_path(tmp_path, capsys):
    missing = tmp_path / "missing.json"
    assert run_command(["sweep", "--config", str(missing)]) == EXIT_USAGE
    assert "missing.json" in capsys.readouterr().err


def test_malformed_config_is_a_data_error(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert run_command(["train", "--config", str(broken)]) == EXIT_DATA


def test_unknown_config_key_is_a_usage_error(tmp_path):
    path = tmp_path / "typo.json"
    path.write_text(json.dumps({"pb": {"pool_sise": 3}}))
    assert run_command(["train", "--config", str(path)]) == EXIT_USAGE


def test_output_width_must_match_classes(tiny_config, tmp_path):
    document = json.loads(tiny_config.read_text())
    document["dataset"] = {"kind": "blobs", "n_per_class": 10, "n_classes": 3}
    tiny_config.write_text(json.dumps(document))
    assert run_command(["train", "--config", str(tiny_config), "--cycles", "0"]) == EXIT_DATA


def test_train_baseline_writes_report_and_weights(tiny_config, tmp_path, capsys):
    out = tmp_path / "baseline"
    code = run_command(["train", "--config", str(tiny_config), "--cycles", "0", "--output-dir", str(out)])
    assert code == EXIT_OK
    header = (out / "report.csv").read_text().splitlines()[0]
    assert header == "cycle,phase,epoch,train_loss,train_acc,val_acc,params,wall_time_s"
    assert (out / "model.pbw").read_bytes()[:4] == b"PBW1"
    assert "cycles=0" in capsys.readouterr().out


def test_train_is_byte_reproducible(tiny_config, tmp_path):
    for name in ("a", "b"):
        assert run_command(["train", "--config", str(tiny_config), "--output-dir", str(tmp_path / name)]) == EXIT_OK
    for artifact in ("report.csv", "model.pbw"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()


def test_sweep_writes_csv(tiny_config, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert run_command(["sweep", "--config", str(tiny_config), "--output-dir", str(out)]) == EXIT_OK
    assert len((out / "sweep.csv").read_text().splitlines()) == 3
    assert "baseline" in capsys.readouterr().out


def test_bench_after_train(tiny_config, tmp_path, capsys):
    out = tmp_path / "bench"
    assert run_command(["train", "--config", str(tiny_config), "--output-dir", str(out)]) == EXIT_OK
    code = run_command(["bench", "--config", str(tiny_config), "--output-dir", str(out), "--widths", "1.0",
                        "--batch-sizes", "1", "4", "--weights", str(out / "model.pbw"), "--hourly", "0.17"])
    assert code == EXIT_OK
    assert len((out / "bench.csv").read_text().splitlines()) == 3
    assert "optimal_batch=" in capsys.readouterr().out


def test_gen_data(tiny_config, tmp_path):
    out = tmp_path / "data"
    assert run_command(["gen-data", "--config", str(tiny_config), "--output-dir", str(out)]) == EXIT_OK
    assert len((out / "data.csv").read_text().splitlines()) == 61


def test_verify_passes(capsys):
    assert run_command(["verify", "--seed", "7"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 6 and all(line.startswith("PASS") for line in lines)


def test_runtime_failure_exit_code(tiny_config, tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(commands, "run_experiment", broken)
    assert run_command(["train", "--config", str(tiny_config), "--output-dir", str(tmp_path)]) == EXIT_RUNTIME
