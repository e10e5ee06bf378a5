import numpy as np
import pytest

from aesim.dataset import extract_patches, generate_synthetic_dataset
from aesim.latent import pca_embed


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic_dataset(32, 32, rng_seed=1)


@pytest.fixture(scope="session")
def small_patches(small_dataset):
    return extract_patches(small_dataset.image, 8)


@pytest.fixture(scope="session")
def small_embedding(small_patches):
    return pca_embed(small_patches)


@pytest.fixture(scope="session")
def small_truth(small_dataset, small_patches):
    return small_dataset.scalarizer_field(small_patches, "area")


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
