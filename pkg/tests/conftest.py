import numpy as np
import pytest

from fwl import spectral as sp
from fwl.params import params_for_drift


@pytest.fixture(scope="session")
def pars_half():
    return params_for_drift(0.5)


@pytest.fixture(scope="session")
def basis_half(pars_half):
    return sp.build_basis(pars_half, K_max=256)


@pytest.fixture(scope="session")
def gl_grid(pars_half):
    """Gauss-Legendre nodes and weights on [0, L] for quadrature oracles."""
    y, w = np.polynomial.legendre.leggauss(800)
    L = pars_half.L
    return 0.5 * L * (y + 1.0), 0.5 * L * w
