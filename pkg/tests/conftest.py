import numpy as np
import pytest

from deomctl.bath import BrownianOscillatorBath, decompose_exponentials, mode_geometry, pet_lambda_matrix
from deomctl.deom import SystemModel, build_dynamics, pet_system


def reference_bath(mode="uncorrelated"):
    return BrownianOscillatorBath(pet_lambda_matrix(0.2, 1.8, mode), 0.4, 0.8, 3.0, 1.0)


class Setup:
    def __init__(self, mode="uncorrelated", L=4):
        self.bath = reference_bath(mode)
        self.expansion = decompose_exponentials(self.bath)
        self.geometry = mode_geometry(self.bath, (0.5, 0.0))
        self.system = pet_system(self.geometry.lambdas)
        self.dyn = build_dynamics(self.system, self.expansion, self.geometry, L)


@pytest.fixture(scope="session")
def ref():
    return Setup()


@pytest.fixture(scope="session")
def ref_small():
    return Setup(L=2)


def two_level(delta_eps=1.0):
    return SystemModel(np.diag([0.0, delta_eps]), (np.diag([0.0, 1.0]),), np.array([[0.0, 1.0], [1.0, 0.0]]))


ACCEPTANCE = {}


def record(criterion, passed, detail):
    """One acceptance line; printed again in the terminal summary."""
    line = f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(str(k).split(".")[0].rstrip("abc")), str(k))):
        terminalreporter.write_line(ACCEPTANCE[key])
