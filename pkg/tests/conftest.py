import numpy as np
import pytest
from hypothesis import settings

from awfl.solver import OnlineInstance, ProblemInstance
from awfl.wireless import CellConfig, ClientProfile, channel_gains, place_clients

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def cell():
    return CellConfig.from_dbm(5e6, -174.0, 6.37e6)


def random_instance(rng, K, T, rho=0.5, lam=0.05, cell=None):
    cell = cell or CellConfig.from_dbm(5e6, -174.0, 6.37e6)
    profiles = place_clients(K, cell, int(rng.integers(1 << 30)))
    gains = channel_gains(profiles, range(T))
    gains = gains * rng.uniform(0.5, 2.0, size=gains.shape)
    return ProblemInstance(rho, lam, cell, profiles, gains)


def random_online(rng, K, rho=0.5, lam=0.05, horizon=10, cell=None):
    off = random_instance(rng, K, 1, rho, lam, cell)
    return OnlineInstance(rho, lam, off.cell, off.profiles, off.gains[:, 0], horizon)


def identical_clients(K, distance_km=0.5):
    return [ClientProfile(k, distance_km, 0.2) for k in range(1, K + 1)]


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion.

    The test body calls ``criterion(n, ok, detail)`` once and then asserts.
    """
    def record(number, ok, detail=""):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
