import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from plasthom.materials import MaterialModel

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

HOMOGENEOUS = {"W": {"kind": "homogeneous", "a": 1.0}, "H": {"kind": "homogeneous", "a": 1.0},
               "q": 4, "K_radius": 0.5}
LAMINATE = {"W": {"kind": "laminate", "a": 1.0, "b": 4.0, "axis": 0},
            "H": {"kind": "laminate", "a": 1.0, "b": 3.0, "axis": 0}, "q": 4, "K_radius": 0.5}


@pytest.fixture
def homogeneous():
    return MaterialModel.from_dict(HOMOGENEOUS)


@pytest.fixture
def laminate():
    return MaterialModel.from_dict(LAMINATE)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria record "(number, passed, detail)" here; printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
