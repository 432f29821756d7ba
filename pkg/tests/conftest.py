import os

# deterministic single-threaded numerics; must precede the numpy import
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from graphlm.datasets import FB_V1, TOY, generate_dataset, load_split


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = generate_dataset(tmp_path_factory.mktemp("toy-data"), TOY, seed=11)
    return root


@pytest.fixture(scope="session")
def fbv1_dataset(tmp_path_factory):
    root = generate_dataset(tmp_path_factory.mktemp("fbv1-data"), FB_V1, seed=7)
    return root


@pytest.fixture(scope="session")
def fbv1_train(fbv1_dataset):
    return load_split(fbv1_dataset, "train")


@pytest.fixture(scope="session")
def fbv1_test(fbv1_dataset):
    return load_split(fbv1_dataset, "test")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
