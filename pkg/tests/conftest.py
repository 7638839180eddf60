import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from risloc.channel import RfConstants, default_scenario

settings.register_profile(
    "risloc", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "risloc"))

UE_DIR = np.array([-1.0, 2.0, 1.0]) / np.sqrt(6.0)


@pytest.fixture(scope="session")
def table1():
    """Reference 32x32 / L = 40 scenario at 2 m, 1 m/s."""
    return default_scenario(2.0, 1.0)


@pytest.fixture(scope="session")
def small():
    """8x8 surface with 12 pilots; cheap enough for property tests."""
    return default_scenario(1.5, 2.0, rows=8, cols=8, num_pilots=12)


def small_scenario(seed=0, rho=1.5, speed=2.0, num_pilots=12, **kw):
    return default_scenario(rho, speed, rows=8, cols=8, num_pilots=num_pilots, profile_seed=seed, **kw)


def random_state(rng, rho_range=(1.0, 6.0), speed=20.0):
    """Random UE position on the front side of the surface and a random velocity."""
    d = rng.standard_normal(3)
    d[2] = abs(d[2]) + 0.1
    d /= np.linalg.norm(d)
    return rng.uniform(*rho_range) * d, speed * rng.uniform(-1, 1, 3)


RF = RfConstants()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
