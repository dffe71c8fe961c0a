import numpy as np
import pytest

from nschannel import evolution as ev
from nschannel import fem, stokes
from nschannel.mesh import build_channel_mesh

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def coarse_spaces():
    return fem.assemble(build_channel_mesh(3.0, 1.0, 12, 4))


@pytest.fixture(scope="session")
def coarse_basis(coarse_spaces):
    return stokes.compute_eigenbasis(coarse_spaces, 12)


@pytest.fixture(scope="session")
def medium_spaces():
    return fem.assemble(build_channel_mesh(3.0, 1.0, 24, 8))


@pytest.fixture(scope="session")
def medium_basis(medium_spaces):
    return stokes.compute_eigenbasis(medium_spaces, 12)


@pytest.fixture(scope="session")
def default_spaces():
    return fem.assemble(build_channel_mesh(3.0, 1.0, 48, 16))


@pytest.fixture(scope="session")
def default_basis(default_spaces):
    return stokes.compute_eigenbasis(default_spaces, 24)


@pytest.fixture(scope="session")
def grid32():
    return ev.make_time_grid(1.0, 32, 4)


@pytest.fixture(scope="session")
def grid64():
    return ev.make_time_grid(1.0, 64, 4)


def random_data(basis, grid, seed, decay=True):
    """Seeded data pair; mode-wise decay keeps norms O(1) across mode counts."""
    rng = np.random.default_rng(seed)
    K = basis.n_modes
    scale = 1.0 / basis.lambdas if decay else np.ones(K)
    mu = rng.standard_normal((K, grid.n_intervals, grid.n_gauss)) * scale[:, None, None]
    a = rng.standard_normal(K) * scale
    return ev.DataPair(basis=basis, grid=grid, mu=mu, a=a)


@pytest.fixture(scope="session")
def make_data():
    return random_data
