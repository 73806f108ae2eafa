import numpy as np
import pytest
import yaml

from trajsim.errors import ConfigError, DataError
from trajsim.model.checkpoint import load_model, meta_path, read_meta, save_model
from trajsim.model.features import featurize
from trajsim.model.sam import SamConfig


def test_round_trip_keeps_embeddings(tmp_path, tiny_model, corpus, porto_grid):
    path = tmp_path / "model.tsps"
    save_model(tiny_model, path, stage="finetune", best_epoch=3, tau=12.5)
    model, meta = load_model(path, expected=tiny_model.config)
    assert meta["stage"] == "finetune" and meta["tau"] == 12.5
    feats = [featurize(t, porto_grid) for t in corpus[:3]]
    np.testing.assert_array_equal(model.embed(feats), tiny_model.embed(feats))


def test_meta_sidecar_is_yaml(tmp_path, tiny_model):
    path = tmp_path / "m.tsps"
    save_model(tiny_model, path, stage="pretrain")
    payload = yaml.safe_load(meta_path(path).read_text())
    assert payload["model"]["d"] == 8
    assert read_meta(path)["stage"] == "pretrain"


def test_config_mismatch_names_the_keys(tmp_path, tiny_model):
    path = tmp_path / "m.tsps"
    save_model(tiny_model, path)
    with pytest.raises(ConfigError, match="model.d: checkpoint 8 vs run 16"):
        load_model(path, expected=SamConfig(d=16, d_hid=16, heads=2))


def test_missing_metadata(tmp_path, tiny_model):
    path = tmp_path / "m.tsps"
    tiny_model.params.save(path)
    with pytest.raises(DataError, match="metadata"):
        load_model(path)


def test_corrupt_parameters(tmp_path, tiny_model):
    path = tmp_path / "m.tsps"
    save_model(tiny_model, path)
    path.write_bytes(path.read_bytes()[:40])
    with pytest.raises(DataError):
        load_model(path)
