import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from semistab import he_solver as hs
from semistab.scenarios import build_bundle, library_spec
from semistab.torus_geometry import make_grid

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid16():
    return make_grid(16)


@pytest.fixture(scope="session")
def cosine16():
    return make_grid(16, 1j, {"kind": "cosine", "amplitude": 0.3, "mode": [1, 0]})


@pytest.fixture(scope="session")
def e2_background():
    b, m = build_bundle(library_spec("E2", N=16))
    return hs.normalize_background(b, m)


@pytest.fixture(scope="session")
def e2_sweep(e2_background):
    return hs.continuity_sweep(e2_background)


@pytest.fixture(scope="session")
def e3_background():
    b, m = build_bundle(library_spec("E3", N=16))
    return hs.normalize_background(b, m)


@pytest.fixture(scope="session")
def e3_sweep(e3_background):
    return hs.continuity_sweep(e3_background)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    def log(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(':'))):
            terminalreporter.write_line(line)
