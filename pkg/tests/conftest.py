import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_diff(f, x0, h=1e-6):
    """Central finite-difference gradient of a scalar function of an array."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    flat = g.reshape(-1)
    xf = x0.reshape(-1)
    for i in range(xf.size):
        xp = xf.copy()
        xp[i] += h
        xm = xf.copy()
        xm[i] -= h
        flat[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * h)
    return g
