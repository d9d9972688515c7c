import numpy as np
import pytest

from stochflow import basis as basis_mod
from stochflow.noise import build_noise
from stochflow.sde import build_system


@pytest.fixture(scope="session")
def basis2_1():
    return basis_mod.build_basis(2, 1)


@pytest.fixture(scope="session")
def basis2_2():
    return basis_mod.build_basis(2, 2)


@pytest.fixture(scope="session")
def basis2_3():
    return basis_mod.build_basis(2, 3)


@pytest.fixture(scope="session")
def conv2_2(basis2_2):
    return basis_mod.convection_tensor(basis2_2)


@pytest.fixture(scope="session")
def viscous_system(basis2_2, conv2_2):
    """nu = 0.1, no noise."""
    return build_system(basis2_2, build_noise(basis2_2), nu=0.1, conv=conv2_2)


@pytest.fixture(scope="session")
def additive_system(basis2_2, conv2_2):
    """nu = 0, additive noise of HS norm 0.5 on brownian mode 0."""
    eta_vec = np.zeros(basis2_2.n_modes)
    eta_vec[basis2_2.index_of("0,1:cos")] = 0.5
    eta_vec[basis2_2.index_of("1,0:sin")] = 0.5
    noise = build_noise(basis2_2, sigma1_modes=[(0, eta_vec)])
    return build_system(basis2_2, noise, nu=0.0, conv=conv2_2)


@pytest.fixture(scope="session")
def transport_system(basis2_2, conv2_2):
    """nu = 0, one transport field on brownian mode 0."""
    field = np.zeros(basis2_2.n_modes)
    field[basis2_2.index_of("1,0:cos")] = 0.6
    field[basis2_2.index_of("0,1:sin")] = 0.4
    noise = build_noise(basis2_2, transport_fields=[(0, field)])
    return build_system(basis2_2, noise, nu=0.0, conv=conv2_2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
