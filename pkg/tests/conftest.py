from __future__ import annotations

import pytest

from seismic_data import GeneratorConfig, TraceDataset, generate_pair
from tcn import TcnConfig
from training import TrainConfig, train


SMALL_TCN = dict(n_blocks=2, kernel=3, width=4)


@pytest.fixture(scope="session")
def small_generator() -> GeneratorConfig:
    return GeneratorConfig(n_traces=12, n_samples=48, horizon_smoothness=5, seed=3)


@pytest.fixture(scope="session")
def small_pair(small_generator):
    """(impedance, seismic) for a 12 x 48 layered section."""
    return generate_pair(small_generator)


@pytest.fixture(scope="session")
def small_dataset(small_pair) -> TraceDataset:
    impedance, seismic = small_pair
    return TraceDataset.with_step(seismic, impedance, 4)


@pytest.fixture(scope="session")
def small_tcn() -> TcnConfig:
    return TcnConfig(**SMALL_TCN)


@pytest.fixture(scope="session")
def small_train_config() -> TrainConfig:
    return TrainConfig(epochs=5, dropout_p=0.1, seed=7, log_every=2, tcn=SMALL_TCN)


@pytest.fixture(scope="session")
def trained(small_dataset, small_train_config):
    return train(small_dataset, small_train_config)
