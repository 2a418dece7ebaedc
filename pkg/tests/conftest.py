import numpy as np
import pytest

from ieegtopo.ingest import Dataset, SynthConfig, synth_dataset


@pytest.fixture(scope="session")
def default_dataset() -> Dataset:
    """The frozen desk-scale dataset: 30 segments, seed 7."""
    recordings, segments = synth_dataset(SynthConfig(seed=7))
    return Dataset(recordings, segments)


@pytest.fixture(scope="session")
def small_dataset() -> Dataset:
    """Faster variant for grid-level tests."""
    recordings, segments = synth_dataset(SynthConfig(seed=7, n_per_class=5, length=512))
    return Dataset(recordings, segments)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
