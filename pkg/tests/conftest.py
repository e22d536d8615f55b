import numpy as np
import pytest

from specfas.dataio import Label, SpectralSample


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sample(rng):
    return SpectralSample("s0", rng.random((8, 6, 3)), rng.random((8, 6, 30)), Label.FAKE, "id03")


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Synthetic train/val split at 16x16, shared across tests."""
    from specfas.dataio import generate_synthetic

    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic(root, seed=3, scale=0.02, h=16, w=16)
    return root
