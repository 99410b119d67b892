import numpy as np
import pytest

from rnnsecure.data import Dataset, DatasetSchema
from rnnsecure.tensor import Rng

ACCEPTANCE_LINES = []


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x``, perturbed in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def blob(seed=7, n=200, f=4):
    """Two classes jittered uniformly around -1 and +1 in every feature: linearly separable."""
    r = Rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = r.uniform(n * f, -0.5, 0.5).reshape(n, f) + np.where(y[:, None] == 1, 1.0, -1.0)
    return Dataset(x, y, DatasetSchema("custom", f, 2))


@pytest.fixture
def rng():
    return Rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
