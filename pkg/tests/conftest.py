import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from umps import core, models, tdvp  # noqa: E402


def random_hamiltonian(d, rng):
    H = rng.normal(size=(d * d, d * d)) + 1j * rng.normal(size=(d * d, d * d))
    return models.TwoSiteHamiltonian(d, H + H.conj().T, name="random")


def random_matrix(shape, rng):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


@pytest.fixture(scope="session")
def aklt():
    A, fp = core.fixed_points(models.aklt_tensor())
    return A, fp, models.aklt_hamiltonian()


@pytest.fixture(scope="session")
def small_random():
    """D=2, d=2 random state with |w2| = 0.23 and a random Hermitian two-site term."""
    rng = np.random.default_rng(7)
    A, fp = core.fixed_points(core.random_tensor(2, 2, rng))
    return A, fp, random_hamiltonian(2, rng)


@pytest.fixture(scope="session")
def heisenberg_d6():
    h = models.heisenberg()
    traj = tdvp.ground_state(h, 6, np.random.default_rng(0), tol_eta=1e-11)
    assert traj.converged
    return traj.A, traj.fp, h


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
