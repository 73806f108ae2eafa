from pathlib import Path

import pytest

from trajsim.errors import ConfigError
from trajsim.utils import config as cfg
from trajsim.utils.config import DEFAULTS, RunConfig, load_config, parse_flat, parse_overrides


def test_defaults_build_and_validate():
    run = RunConfig.build(env={})
    assert run["model.d"] == 64
    assert run.sam_config().d_hid == 256
    assert run.grid().cell_size == 100.0
    assert run.pretrain_settings().epochs == 20
    assert run.finetune_settings().weights.gamma1 == 0.1


def test_shipped_example_config_is_valid():
    example = Path(cfg.__file__).parent.parent / "config.example.yml"
    run = RunConfig.build(example, env={})
    assert run["dataset.preset"] == "porto"
    assert run.bbox().lon_min == -8.519


def test_flat_file_values_are_typed(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# comment\nmodel.d = 32\nmodel.heads = 4  # inline\ndistance.planar = true\n")
    run = RunConfig.build(path, env={})
    assert run["model.d"] == 32 and run["model.heads"] == 4
    assert run.planar is True


def test_flat_parse_errors_name_the_line():
    with pytest.raises(ConfigError, match=r"run.conf:2"):
        parse_flat("seed = 1\nnonsense\n", "run.conf")


def test_yaml_file_is_flattened(tmp_path):
    path = tmp_path / "run.yml"
    path.write_text("model:\n  d: 16\n  heads: 2\nloss:\n  gamma1: 0.5\n")
    assert load_config(path) == {"model.d": 16, "model.heads": 2, "loss.gamma1": 0.5}


def test_unknown_key_and_wrong_type(tmp_path):
    with pytest.raises(ConfigError, match="Unknown config key"):
        RunConfig.build(overrides={"model.width": 3}, env={})
    with pytest.raises(ConfigError, match="integer"):
        RunConfig.build(overrides={"model.d": 1.5}, env={})
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.build(tmp_path / "missing.yml", env={})


def test_integers_are_accepted_for_float_keys():
    run = RunConfig.build(overrides={"grid.cell_size": 50}, env={})
    assert run["grid.cell_size"] == 50.0 and isinstance(run["grid.cell_size"], float)


def test_preset_applies_below_explicit_values(tmp_path):
    run = RunConfig.build(overrides={"dataset.preset": "geolife"}, env={})
    assert run["filter.max_len"] == 300
    assert run["bbox.lon_min"] == 116.25
    path = tmp_path / "run.conf"
    path.write_text("dataset.preset = tdrive\nfilter.max_len = 150\n")
    assert RunConfig.build(path, env={})["filter.max_len"] == 150
    with pytest.raises(ConfigError, match="preset"):
        RunConfig.build(overrides={"dataset.preset": "nyc"}, env={})


def test_precedence_file_env_overrides(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("threads = 2\nseed = 5\n")
    assert RunConfig.build(None, env={cfg.ENV_THREADS: "3"})["threads"] == 3
    assert RunConfig.build(path, env={})["threads"] == 2
    assert RunConfig.build(path, env={cfg.ENV_THREADS: "3"})["threads"] == 3
    run = RunConfig.build(path, overrides={"seed": 9}, env={cfg.ENV_THREADS: "3"})
    assert run.seed == 9


@pytest.mark.parametrize("override, message", [
    ({"model.heads": 5}, "divisible"),
    ({"train.batch_size": 2}, "batch_size"),
    ({"filter.min_len": 50, "filter.max_len": 40}, "min_len"),
    ({"ddbm.t_min": 0.9, "ddbm.t_max": 0.5}, "t_min"),
    ({"loss.tau_mode": "median"}, "tau_mode"),
    ({"grid.cell_size": 0}, "cell_size"),
    ({"bbox.lon_min": 0.0, "bbox.lon_max": 0.0}, "Degenerate"),
])
def test_validation(override, message):
    with pytest.raises(ConfigError, match=message):
        RunConfig.build(overrides=override, env={})


def test_parse_overrides():
    assert parse_overrides(["model.d=8", "model.fusion = gps", "distance.planar=false"]) == {
        "model.d": 8, "model.fusion": "gps", "distance.planar": False,
    }
    with pytest.raises(ConfigError):
        parse_overrides(["model.d"])


def test_config_path_resolution(tmp_path, monkeypatch):
    explicit = tmp_path / "a.yml"
    assert cfg.get_config_path(explicit) == explicit
    monkeypatch.setenv(cfg.ENV_CONFIG, str(tmp_path / "b.yml"))
    assert cfg.get_config_path() == tmp_path / "b.yml"
    monkeypatch.delenv(cfg.ENV_CONFIG)
    monkeypatch.setenv("HOME", str(tmp_path))
    assert cfg.get_config_path() is None


def test_nested_dump_round_trips_through_yaml(tmp_path):
    import yaml

    run = RunConfig.build(overrides={"model.d": 16, "model.heads": 4}, env={})
    path = tmp_path / "dump.yml"
    path.write_text(yaml.safe_dump(run.to_nested()))
    assert RunConfig.build(path, env={}).values == run.values
    assert set(run.values) == set(DEFAULTS)
