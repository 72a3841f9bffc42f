import warnings

import pytest

from dclip.data import SyntheticSpec, gen_synthetic
from dclip.training import TrainConfig, prepare_data


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A compact dataset for unit tests: 64 train / 16 heldout, seed 7."""
    path = tmp_path_factory.mktemp("data") / "small"
    gen_synthetic(SyntheticSpec(train_size=64, heldout_size=16, seed=7), path)
    return path


@pytest.fixture(scope="session")
def small_prepared(small_dataset):
    config = TrainConfig.preset("b", seed=7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return prepare_data(small_dataset, config)
