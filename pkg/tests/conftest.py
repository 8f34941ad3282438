import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracmv.gaussian_noise import NoiseBundle
from fracmv.grid import HurstPair, TimeGrid
from fracmv.model import DegenerateSpec, LinearMeanFieldModel

settings.register_profile("fracmv", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fracmv")


def scalar_model(a=-1.0, abar=0.5, c=1.0, sigma=0.5, s0=0.3, s1=0.2, H=0.7, H_tilde=0.8):
    return LinearMeanFieldModel.scalar(a, abar, c, sigma, s0, s1, H, H_tilde)


def kinetic_model(A0=((0.0, 0.0),), A1=((0.0, 0.0),), c=(0.0,), s0=0.3, s1=0.0, H=0.7,
                  A=0.0, B=1.0):
    inner = LinearMeanFieldModel(np.array(A0), np.array(A1), np.array(c), [[1.0]], [[s0]],
                                 [[s1]], HurstPair(H, 0.8))
    return DegenerateSpec(1, 1, [[A]], [[B]], inner)


def zero_noise(grid: TimeGrid, n: int, d: int, H=0.7, H_tilde=0.8) -> NoiseBundle:
    z = np.zeros((n, grid.n_steps, d))
    zn = np.zeros((n, grid.node_count, d))
    return NoiseBundle(grid, z, z, zn, zn, H, H_tilde)


@pytest.fixture
def linear_model():
    return scalar_model()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
