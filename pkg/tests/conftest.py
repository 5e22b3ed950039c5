import numpy as np
import pytest

from roadsig import sim
from roadsig.core import Drive, build_route
from roadsig.preprocess import GRAVITY


@pytest.fixture
def straight_route():
    return build_route(np.array([[0.0, 0.0], [100.0, 0.0]]), 4)


@pytest.fixture
def l_route():
    return build_route(np.array([[0.0, 0.0], [60.0, 0.0], [60.0, 40.0]]), 5)


def stationary_drive(seconds: float, rate_hz: float = 200.0) -> Drive:
    n = int(round(seconds * rate_hz))
    imu = np.zeros((n, 6))
    imu[:, 2] = GRAVITY
    return Drive(np.arange(n) / rate_hz, imu, rate_hz)


@pytest.fixture(scope="session")
def small_sim():
    """A short separable route with a handful of drives, shared across tests."""
    cfg = sim.separable_profile(seed=11, route_length_m=600.0, n_segments=6)
    route = sim.synth_route(cfg)
    return cfg, route, sim.synth_dataset(cfg, 4, 1, 2, sim=route)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, when that suite ran."""
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(mod.CRITERIA):
        line = mod.RESULTS.get(k, f"criterion {k:2d}: FAIL  {mod.CRITERIA[k]} (no verdict recorded)")
        terminalreporter.write_line(line)
