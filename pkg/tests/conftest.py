import numpy as np
import pytest

from pricesim import Link, generate_cluster_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_instance(seed=8, n=20, m=4, d=3, L=10.0, link=Link.LOGISTIC,
                  gamma0=0.0, **kw):
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return generate_cluster_instance(n, m, d, L, link, gamma0, gen, seed=seed,
                                     **kw)


@pytest.fixture
def small_logistic_instance():
    return make_instance()


@pytest.fixture
def small_linear_instance():
    return make_instance(seed=9, L=1.0, link=Link.LINEAR)
