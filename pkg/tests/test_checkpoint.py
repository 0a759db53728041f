from __future__ import annotations

import struct

import numpy as np
import pytest

from checkpoint import (
    MAGIC,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from errors import CheckpointFormatError, CheckpointVersionError
from seismic_data import NormStats
from tcn import TcnConfig, init_params, model_forward
from tensor import Rng, Tensor


@pytest.fixture
def checkpoint() -> Checkpoint:
    config = TcnConfig(n_blocks=3, kernel=3, channels=[4, 4, 6], padding_mode="causal")
    return Checkpoint(
        config=config,
        params=init_params(config, Rng(5)),
        stats=NormStats(0.01, 0.5, 6000.0, 1500.0, provenance=(0, 4, 8)),
        history=(1.5, 0.75, 0.5),
        seed=5,
    )


def test_round_trip_is_bit_exact(tmp_path, checkpoint):
    path = save_checkpoint(tmp_path / "model.tcn", checkpoint)
    loaded = load_checkpoint(path)
    assert encode_checkpoint(loaded) == path.read_bytes()
    assert loaded.config == checkpoint.config
    assert loaded.stats == checkpoint.stats
    assert loaded.history == checkpoint.history
    assert loaded.seed == 5
    for a, b in zip(loaded.params.tensors(), checkpoint.params.tensors()):
        np.testing.assert_array_equal(a.data, b.data)


def test_round_trip_reproduces_predictions(checkpoint):
    loaded = decode_checkpoint(encode_checkpoint(checkpoint))
    trace = Tensor(Rng(1).normal(50).reshape(1, 50))
    np.testing.assert_array_equal(
        model_forward(trace, loaded.params, loaded.config).data,
        model_forward(trace, checkpoint.params, checkpoint.config).data,
    )


def test_unknown_version(checkpoint):
    payload = bytearray(encode_checkpoint(checkpoint))
    payload[len(MAGIC)] = 99
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(bytes(payload))


@pytest.mark.parametrize("length", [3, 10**6])
def test_corrupted_config_length(checkpoint, length):
    payload = bytearray(encode_checkpoint(checkpoint))
    offset = len(MAGIC) + 1
    payload[offset : offset + 4] = struct.pack("<I", length)
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(bytes(payload))


def test_bad_magic(checkpoint):
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(b"NOTCKPT" + encode_checkpoint(checkpoint)[len(MAGIC) :])


def test_truncated_and_padded(checkpoint):
    payload = encode_checkpoint(checkpoint)
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(payload[:-3])
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(payload + b"\x00")


def test_nan_parameter_is_a_format_error(checkpoint):
    payload = bytearray(encode_checkpoint(checkpoint))
    config_len = struct.unpack_from("<I", payload, len(MAGIC) + 1)[0]
    # first tensor: u32 count, u8 rank, 3 x u32 extents, then f64 values
    first_value = len(MAGIC) + 1 + 4 + config_len + 4 + 1 + 12
    payload[first_value : first_value + 8] = struct.pack("<d", float("nan"))
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(bytes(payload))


def test_version_and_format_errors_are_distinct():
    assert not issubclass(CheckpointVersionError, CheckpointFormatError)
    assert not issubclass(CheckpointFormatError, CheckpointVersionError)
