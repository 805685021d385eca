import numpy as np
import pytest
from hypothesis import settings

from ternkit.rng import Rng

settings.register_profile("ternkit", deadline=None, derandomize=True)
settings.load_profile("ternkit")


@pytest.fixture
def rng():
    return Rng(1234)


def random_matrix(rng: Rng, rows: int, cols: int, sigma: float = 1.0) -> np.ndarray:
    return rng.normals(rows * cols, sigma=sigma).reshape(rows, cols).astype(np.float32)


def max_rel_err(got: np.ndarray, want: np.ndarray) -> float:
    """Infinity-norm error relative to 1 + the oracle's own infinity norm."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return float(np.abs(got - want).max() / (1.0 + np.abs(want).max()))
