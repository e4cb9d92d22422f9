import json
from pathlib import Path

import pytest

from app.models.schemas import RunConfig
from app.utils.config import config, load_run_config, set_dotted
from app.utils.exceptions import ConfigurationError, FormatError, UsageError


def test_defaults_without_file():
    cfg = load_run_config()
    assert cfg.seed == RunConfig().seed
    assert cfg.output_dir == config.OUTPUT_DIR
    assert cfg.sweep.workers == config.WORKERS


def test_overrides_beat_the_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 11, "pb": {"max_cycles": 2, "pool_size": 6}}))
    cfg = load_run_config(str(path), {"pb.max_cycles": 0, "pb.pool_size": None, "network.width_multiplier": 0.5})
    assert cfg.seed == 11
    assert cfg.pb.max_cycles == 0
    assert cfg.pb.pool_size == 6
    assert cfg.network.width_multiplier == 0.5


def test_file_beats_environment_defaults(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "OUTPUT_DIR", "from-env")
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"output_dir": "from-file"}))
    assert load_run_config(str(path)).output_dir == "from-file"
    assert load_run_config().output_dir == "from-env"


def test_set_dotted_creates_levels():
    target = {"pb": 3}
    set_dotted(target, "pb.lr_main", 0.1)
    set_dotted(target, "a.b.c", 1)
    assert target == {"pb": {"lr_main": 0.1}, "a": {"b": {"c": 1}}}


@pytest.mark.parametrize("body, error", [
    ("[1, 2]", FormatError),
    ("{oops", FormatError),
    ('{"pb": {"pool_size": 0}}', ConfigurationError),
    ('{"sweep": {"width_multipliers": [1.5]}}', ConfigurationError),
    ('{"dataset": {"fractions": [0.5, 0.5, 0.5]}}', ConfigurationError),
    ('{"bench": {"batch_sizes": [8, 4]}}', ConfigurationError),
    ('{"network": {"layers": [{"kind": "conv2d", "out_channels": 4, "kernel": 5}]}}', ConfigurationError),
])
def test_invalid_documents(tmp_path, body, error):
    path = tmp_path / "bad.json"
    path.write_text(body)
    with pytest.raises(error):
        load_run_config(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(UsageError, match="not found"):
        load_run_config(str(tmp_path / "absent.json"))


def test_reference_configs_parse():
    root = Path(__file__).resolve().parent.parent / "configs"
    spirals = load_run_config(str(root / "two_spirals.json"))
    assert spirals.seed == 7 and spirals.sweep.width_multipliers == [1.0, 0.5, 0.25]
    mnist = load_run_config(str(root / "mnist_cnn.json"))
    assert mnist.network.input_shape == [1, 28, 28]
