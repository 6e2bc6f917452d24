import numpy as np
import pytest

from contavg.ftseries import FourierTaylorSeries, VectorFieldFT, get_basis


def random_series(rng, m, K, N, max_degree=None, scale=1.0):
    """Random real series; coefficients beyond ``max_degree`` are zero."""
    basis = get_basis(m, N)
    c = rng.normal(size=(K + 1, basis.size)) + 1j * rng.normal(size=(K + 1, basis.size))
    if max_degree is not None:
        c[:, basis.degree > max_degree] = 0
    return FourierTaylorSeries(m, K, N, scale * c)


def random_field(rng, m, K, N, max_degree=None, scale=1.0):
    return VectorFieldFT([random_series(rng, m, K, N, max_degree, scale) for _ in range(m)])


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)
