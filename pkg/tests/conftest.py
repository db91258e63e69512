import sys

import numpy as np
import pytest

from owbo.core import Dataset
from owbo.density import GaussianMixture
from owbo.gp import GpHyperparams, GpModel
from owbo.kernel import RbfArd

from oracles import NaiveGp


def random_model(rng, d=None, n=None, noise=None):
    """A GP with random hyperparameters on random unit-cube data."""
    d = d or int(rng.integers(1, 3))
    n = n if n is not None else int(rng.integers(3, 9))
    X = rng.random((n, d))
    y = rng.standard_normal(n)
    sf2 = float(rng.uniform(0.5, 2.0))
    theta = rng.uniform(0.02, 0.3, d)
    noise = float(10 ** rng.uniform(-6, -2)) if noise is None else noise
    m0 = float(np.mean(y)) if n else 0.0
    model = GpModel(Dataset(X, y), GpHyperparams(m0, RbfArd(sf2, theta), noise))
    return model, NaiveGp(X, y, m0, sf2, theta, noise)


def random_mixture(rng, d, k=None, cov_range=(0.005, 0.1)):
    k = k or int(rng.integers(1, 4))
    w = rng.uniform(0.2, 1.0, k)
    means = rng.random((k, d))
    covs = []
    for _ in range(k):
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        covs.append((Q * rng.uniform(*cov_range, d)) @ Q.T)
    return GaussianMixture(w / w.sum(), means, np.array(covs), float(rng.uniform(0.5, 3.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        title, ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} {detail}")
