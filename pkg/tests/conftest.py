import pytest
import os
import sys
import tempfile

import numpy as np

# Add project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from src.data import InstanceSpec, generate


@pytest.fixture(autouse=True)
def clear_seed_override(monkeypatch):
    """Keep L1PCA_SEED from the caller's shell out of every test."""
    monkeypatch.delenv("L1PCA_SEED", raising=False)


@pytest.fixture
def temp_dir():
    """Provide a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as tmpdirname:
        yield tmpdirname


@pytest.fixture
def test_data_dir():
    """Get the test_data directory path."""
    return os.path.join(os.path.dirname(os.path.dirname(__file__)), "test_data")


@pytest.fixture
def golden_path(test_data_dir):
    return os.path.join(test_data_dir, "golden_2x4.csv")


@pytest.fixture
def golden_x():
    """The 2 x 4 golden instance, samples as columns."""
    return np.array([
        [3.0, 2.0, -1.0, 4.0],
        [1.0, -1.0, 2.5, 0.5],
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_instance():
    """A 5 x 8 noisy rank-2 instance with a couple of outliers."""
    return generate(InstanceSpec(d=5, n=8, outlier_fraction=0.25, outlier_scale=5.0,
                                 noise_std=0.1, latent_rank=2, seed=7))


@pytest.fixture
def gaussian_instance(rng):
    """A 4 x 6 Gaussian instance."""
    return rng.standard_normal((4, 6))
