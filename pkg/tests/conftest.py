import numpy as np
import pytest

from specgrad.core import FeatureMatrix, SymPsdMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(d: int, rng: np.random.Generator, jitter: float = 0.5) -> SymPsdMatrix:
    a = rng.normal(size=(d, d))
    return SymPsdMatrix(a @ a.T + jitter * np.eye(d))


def random_features(d: int, n: int, rng: np.random.Generator) -> FeatureMatrix:
    return FeatureMatrix(rng.normal(size=(d, n)))
