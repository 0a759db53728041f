from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

import training
from checkpoint import encode_checkpoint
from errors import CheckpointVersionError, TrainingDivergedError, exit_code_for
from layers import mse_loss
from optim import AdamState, adam_step
from seismic_data import GeneratorConfig, ImpedanceSection, TraceDataset, generate_pair
from tcn import init_params, model_backward, model_forward_cached
from tensor import Rng, Tensor
from training import (
    DROPOUT_STREAM,
    INIT_STREAM,
    TrainConfig,
    predict_section,
    train,
    write_history_csv,
)


def test_defaults_follow_published_protocol():
    config = TrainConfig()
    assert (config.lr, config.weight_decay, config.epochs, config.dropout_p) == (
        0.001,
        0.0001,
        2941,
        0.2,
    )
    assert config.batch_policy == "full"
    assert config.tcn.kernel == 5 and config.tcn.n_blocks == 6


def test_dropout_is_copied_into_architecture():
    assert TrainConfig(dropout_p=0.0).tcn.dropout_p == 0.0
    assert TrainConfig(tcn={"dropout_p": 0.3}).dropout_p == 0.3


def test_invalid_train_config():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)


def test_one_epoch_is_one_optimizer_step(small_dataset, small_train_config):
    result = train(small_dataset, small_train_config.model_copy(update={"epochs": 1}))
    assert result.optimizer_steps == 1
    assert len(result.history) == 1


def test_training_is_deterministic(small_dataset, small_train_config, trained):
    again = train(small_dataset, small_train_config)
    assert again.history == trained.history
    assert encode_checkpoint(again.checkpoint) == encode_checkpoint(trained.checkpoint)


def test_checkpoint_carries_run_metadata(small_dataset, small_train_config, trained):
    ckpt = trained.checkpoint
    assert ckpt.history == trained.history
    assert ckpt.seed == small_train_config.seed
    assert ckpt.stats.provenance == small_dataset.training_indices
    assert ckpt.config == small_train_config.tcn


def test_loss_improves(small_dataset):
    config = TrainConfig(
        epochs=40, lr=0.01, dropout_p=0.0, seed=1, tcn={"n_blocks": 2, "kernel": 3, "width": 4}
    )
    history = train(small_dataset, config).history
    assert history[-1] < history[0]


def test_single_epoch_replays_adam_step(small_dataset):
    config = TrainConfig(
        epochs=1, weight_decay=0.0, dropout_p=0.0, seed=2, tcn={"n_blocks": 2, "kernel": 3, "width": 4}
    )
    result = train(small_dataset, config)

    params = init_params(config.tcn, Rng(config.seed, INIT_STREAM))
    x, y = small_dataset.training_arrays()
    pred, cache = model_forward_cached(
        x, params, config.tcn, Rng(config.seed, DROPOUT_STREAM), training=True
    )
    loss, grad = mse_loss(pred, y)
    grads = model_backward(cache, params, config.tcn, grad)
    state = AdamState.create(params.tensors(), lr=config.lr, weight_decay=0.0)
    expected, _ = adam_step(params.tensors(), grads.tensors(), state)

    assert result.history == (loss,)
    for got, want in zip(result.checkpoint.params.tensors(), expected):
        np.testing.assert_array_equal(got.data, want.data)


def test_validation_traces_do_not_leak(small_dataset, small_train_config, trained):
    validation = list(small_dataset.validation_indices)
    seismic = small_dataset.seismic.values.data.copy()
    impedance = small_dataset.impedance.values.data.copy()
    seismic[validation] = Rng(99).normal(len(validation) * seismic.shape[1]).reshape(
        len(validation), -1
    )
    impedance[validation] *= 3.0
    corrupted = TraceDataset.from_sections(
        replace(small_dataset.seismic, values=Tensor(seismic)),
        replace(small_dataset.impedance, values=Tensor(impedance)),
        small_dataset.training_indices,
    )
    again = train(corrupted, small_train_config)
    assert encode_checkpoint(again.checkpoint) == encode_checkpoint(trained.checkpoint)


def test_non_finite_loss_aborts(monkeypatch, small_dataset, small_train_config):
    def exploding(params, state, x, y, config, rng):
        return float("nan"), params, state

    monkeypatch.setattr(training, "run_epoch", exploding)
    with pytest.raises(TrainingDivergedError, match="epoch 0") as info:
        train(small_dataset, small_train_config)
    assert info.value.epoch == 0
    assert exit_code_for(info.value) == 3


def test_prediction_shape_and_purity(small_dataset, trained):
    first = predict_section(small_dataset.seismic, trained.checkpoint)
    second = predict_section(small_dataset.seismic, trained.checkpoint)
    assert isinstance(first, ImpedanceSection)
    assert first.predicted and not first.normalized
    assert first.extents == small_dataset.seismic.extents
    np.testing.assert_array_equal(first.values.data, second.values.data)


def test_threaded_prediction_equals_serial(trained):
    _, seismic = generate_pair(GeneratorConfig(n_traces=150, n_samples=48, seed=11))
    serial = predict_section(seismic, trained.checkpoint, threads=1)
    threaded = predict_section(seismic, trained.checkpoint, threads=4)
    np.testing.assert_array_equal(serial.values.data, threaded.values.data)


def test_prediction_accepts_any_length(trained):
    _, seismic = generate_pair(GeneratorConfig(n_traces=3, n_samples=7, seed=1))
    assert predict_section(seismic, trained.checkpoint).extents == (3, 7)


def test_prediction_rejects_unknown_version(small_dataset, trained):
    stale = replace(trained.checkpoint, version=2)
    with pytest.raises(CheckpointVersionError):
        predict_section(small_dataset.seismic, stale)


def test_history_csv(tmp_path):
    path = write_history_csv(tmp_path / "history.csv", [0.5, 0.25])
    assert path.read_text(encoding="utf-8").splitlines() == ["epoch,loss", "1,0.5", "2,0.25"]

