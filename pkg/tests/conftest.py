import numpy as np
import pytest
from hypothesis import settings

from emdtn import jets
from emdtn.jets import Jet3

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


def random_jet(rng, order, const=None, complex_valued=True, scale=1.0):
    c = rng.uniform(-scale, scale, jets.n_coeffs(order)).astype(complex)
    if complex_valued:
        c = c + 1j * rng.uniform(-scale, scale, jets.n_coeffs(order))
    if const is not None:
        c[0] = const
    return Jet3(c, order)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
