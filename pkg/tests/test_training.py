import numpy as np
import pytest

from trajsim.core.matrix import build_matrix
from trajsim.errors import DataError
from trajsim.model.bridge import BridgeSchedule
from trajsim.model.losses import mean_off_diagonal
from trajsim.model.training import (
    EarlyStopping,
    FinetuneSettings,
    PretrainSettings,
    finetune,
    finetune_data,
    make_batches,
    pretrain,
)


def test_make_batches_merges_small_tail():
    batches = make_batches(10, 4, np.random.default_rng(0), minimum=3)
    assert [len(b) for b in batches] == [4, 6]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))


def test_make_batches_single_short_batch_is_kept():
    assert [len(b) for b in make_batches(2, 8, np.random.default_rng(0), minimum=3)] == [2]


def test_early_stopping():
    stopper = EarlyStopping(patience=2)
    for epoch, value in enumerate([3.0, 2.0, 2.5, 2.6], start=1):
        stopper.update(epoch, value)
    assert stopper.should_stop
    assert (stopper.best_epoch, stopper.best) == (2, 2.0)


def _recorder(model):
    states = {}

    def on_epoch(record):
        states[record.epoch] = model.params.state()

    return states, on_epoch


def _assert_restored(model, states, epoch):
    for name, value in model.params.state().items():
        np.testing.assert_array_equal(value, states[epoch][name])


def test_pretrain_restores_best_epoch(tiny_model, corpus, porto_grid):
    settings = PretrainSettings(epochs=3, patience=3, batch_size=4, resample_len=8, seed=1)
    states, on_epoch = _recorder(tiny_model)
    result = pretrain(tiny_model, corpus[:12], corpus[12:16], porto_grid, BridgeSchedule(), settings, on_epoch)
    assert len(result.history) == 3
    assert result.best_eval_loss == min(r.eval_loss for r in result.history)
    _assert_restored(tiny_model, states, result.best_epoch)


def test_pretrain_needs_two_trajectories(tiny_model, corpus, porto_grid):
    with pytest.raises(DataError):
        pretrain(tiny_model, corpus[:1], corpus[1:3], porto_grid, BridgeSchedule())


def test_pretrain_without_eval_follows_training_loss(tiny_model, corpus, porto_grid, caplog):
    settings = PretrainSettings(epochs=1, batch_size=4, resample_len=8)
    result = pretrain(tiny_model, corpus[:6], corpus[6:7], porto_grid, BridgeSchedule(), settings)
    assert result.history[0].eval_loss == result.history[0].train_loss
    assert "early stopping follows the training loss" in caplog.text


@pytest.fixture
def finetune_split(corpus, porto_grid):
    trajs = corpus[:16]
    matrix = build_matrix(trajs, "hausdorff", projection=porto_grid.projection, threads=2)
    train = finetune_data(trajs[:12], porto_grid, matrix)
    eval_data = finetune_data(trajs[12:], porto_grid, matrix)
    return train, eval_data


def test_finetune_records_components_and_metrics(tiny_model, finetune_split):
    train, eval_data = finetune_split
    tau = mean_off_diagonal(train.matrix.values)
    settings = FinetuneSettings(epochs=3, patience=5, batch_size=4, seed=2)
    states, on_epoch = _recorder(tiny_model)
    result = finetune(tiny_model, train, eval_data, tau, settings, on_epoch)
    record = result.history[0]
    assert set(record.components) == {"mse", "listnet", "rd_listnet"}
    assert set(record.metrics) == {"HR@1"}
    assert record.row()["epoch"] == 1
    _assert_restored(tiny_model, states, result.best_epoch)


def test_finetune_is_deterministic(tiny_config, finetune_split):
    from trajsim.model.sam import SamModel

    train, eval_data = finetune_split
    settings = FinetuneSettings(epochs=2, batch_size=5, seed=3)
    histories = []
    for _ in range(2):
        model = SamModel(tiny_config, seed=8)
        histories.append([r.row() for r in finetune(model, train, eval_data, 1000.0, settings).history])
    assert histories[0] == histories[1]


def test_finetune_without_eval(tiny_model, finetune_split, caplog):
    train, _ = finetune_split
    result = finetune(tiny_model, train, None, 500.0, FinetuneSettings(epochs=1, batch_size=6))
    assert result.history[0].eval_loss == result.history[0].train_loss
    assert result.history[0].metrics == {}
    assert "early stopping follows the training loss" in caplog.text


def test_finetune_needs_three_trajectories(tiny_model, corpus, porto_grid):
    matrix = build_matrix(corpus[:2], "sspd")
    with pytest.raises(DataError, match="at least 3"):
        finetune(tiny_model, finetune_data(corpus[:2], porto_grid, matrix), None, 1.0)
