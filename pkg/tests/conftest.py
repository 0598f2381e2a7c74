import numpy as np
import pytest

from kwlab.spectral import GridSpec, SpectralField, mode_numbers, project_state, sobolev_norm


def hermitian_random_field(grid, sigma, amplitude, seed, envelope="gaussian"):
    """Mean-zero real random data with the given L^2 size."""
    rng = np.random.default_rng(seed)
    m = grid.num_modes
    k = np.abs(mode_numbers(grid)).astype(float)
    if envelope == "gaussian":
        env = np.exp(-((k / sigma) ** 2))
    else:
        env = (1.0 + k**2) ** (-0.5) * np.exp(-((k / (0.45 * m)) ** 8))
    c = env * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    c = c + np.conj(c[(-np.arange(m)) % m])
    u = project_state(SpectralField(c, grid))
    size = sobolev_norm(u, 0.0)
    return SpectralField(amplitude * u.coeffs / size, grid)


@pytest.fixture
def unit_grid():
    return GridSpec(num_modes=64, length=2.0 * np.pi, lam=1.0, beta=1)


@pytest.fixture
def wide_grid():
    # wide torus: frequency spacing 1/8, top frequency just under 2
    return GridSpec(num_modes=32, length=16.0 * np.pi, lam=1.0, beta=1)
