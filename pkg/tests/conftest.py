import numpy as np
import pytest

from mmdlfi import DiscreteIdentity, Gaussian, ProductWitness, Sample


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_instance(gen, kind, n=8, m=5):
    """One (X, Y, Z, kernel) tuple; kind cycles the kernel families."""
    if kind == "identity":
        k = 6
        return (
            Sample.categorical(gen.integers(1, k + 1, size=n), k),
            Sample.categorical(gen.integers(1, k + 1, size=n), k),
            Sample.categorical(gen.integers(1, k + 1, size=m), k),
            DiscreteIdentity(k),
        )
    if kind == "gaussian":
        d = 2
        return (
            Sample.real(gen.normal(size=(n, d))),
            Sample.real(gen.normal(0.4, 1.0, size=(n, d))),
            Sample.real(gen.normal(0.2, 1.0, size=(m, d))),
            Gaussian(1.0 + gen.random()),
        )
    w = gen.normal(size=3)
    return (
        Sample.real(gen.normal(size=(n, 3))),
        Sample.real(gen.normal(0.5, 1.0, size=(n, 3))),
        Sample.real(gen.normal(size=(m, 3))),
        ProductWitness(lambda pts, w=w: np.tanh(pts @ w)),
    )
