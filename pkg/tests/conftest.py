import logging

import numpy as np
import pytest

from noisylabels.datagen import BlobSpec, generate_blobs, inject_noise, split
from noisylabels.trainer import TrainConfig
from noisylabels.transition import circulant_matrix, symmetric_matrix

# transition matrices printed for the two known-noise datasets, with the
# estimate reported for each of them
circulant_true = np.array([
    [0.7, 0.3, 0.0, 0.0],
    [0.0, 0.7, 0.3, 0.0],
    [0.0, 0.0, 0.7, 0.3],
    [0.3, 0.0, 0.0, 0.7],
])
circulant_estimate = np.array([
    [0.7005, 0.2867, 0.0058, 0.0069],
    [0.0015, 0.6970, 0.2991, 0.0023],
    [0.0054, 0.0, 0.7392, 0.2569],
    [0.2692, 0.0016, 0.0105, 0.7187],
])
symmetric_true = np.array([
    [0.4, 0.2, 0.2, 0.2],
    [0.2, 0.4, 0.2, 0.2],
    [0.2, 0.2, 0.4, 0.2],
    [0.2, 0.2, 0.2, 0.4],
])
symmetric_estimate = np.array([
    [0.3967, 0.2016, 0.2038, 0.1978],
    [0.2021, 0.3967, 0.2001, 0.2011],
    [0.1970, 0.2006, 0.3995, 0.2029],
    [0.1962, 0.2008, 0.2016, 0.4014],
])

# revised estimate reported for a dataset without a known matrix
unknown_estimate = np.array([
    [0.8858, 0.0962, 0.0078, 0.0102],
    [0.0058, 0.9053, 0.0900, 0.0],
    [0.0030, 0.0, 0.9219, 0.0786],
    [0.0906, 0.0, 0.0247, 0.8854],
])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def circulant():
    return circulant_matrix(4, 0.3)


@pytest.fixture
def symmetric():
    return symmetric_matrix(4, 0.6)


@pytest.fixture
def small_blobs():
    """Well separated 4-class blobs, 50 samples per class"""
    return generate_blobs(BlobSpec(c=4, d=8, n_per_class=50, seed=3))


@pytest.fixture
def noisy_split(small_blobs, circulant):
    noisy = inject_noise(small_blobs, circulant, seed=4)
    return split(noisy, 0.8, seed=5)


@pytest.fixture
def quick_train():
    return TrainConfig(epochs=3, batch_size=32, learning_rate=0.005, patience=2, seed=0)


@pytest.fixture(autouse=True)
def quiet_logging():
    logging.getLogger("noisylabels").setLevel(logging.WARNING)
    yield
    logging.getLogger("noisylabels").setLevel(logging.NOTSET)


@pytest.fixture
def printed():
    return dict(circulant=(circulant_true, circulant_estimate),
                symmetric=(symmetric_true, symmetric_estimate),
                unknown=unknown_estimate)
