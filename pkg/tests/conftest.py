import numpy as np
import pytest

from saldp import models as M
from saldp.schedule import StepSchedule

ACCEPTANCE_LINES = {}


def record_acceptance(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def small_models():
    """Finite-noise test models (S <= 8, d1 <= 2) keyed by name."""
    rng = np.random.default_rng(7)
    P3 = rng.dirichlet(np.ones(3), 3)
    G3 = rng.normal(size=(3, 1))
    P4 = rng.dirichlet(np.ones(4), 4)
    G4 = rng.normal(size=(4, 2))
    Pz = np.array([[0.0, 0.6, 0.4], [0.5, 0.2, 0.3], [0.3, 0.3, 0.4]])
    Gz = np.array([[0.0], [1.0], [-1.0]])
    return {
        "bernoulli": M.bernoulli_model(0.3, 0.0),
        "two_state": M.two_state_model(0.3, 0.4, 0.5, 0.0),
        "random3": M.finite_model(P3, G3),
        "random4_2d": M.finite_model(P4, G4),
        "sgd": M.sgd_logistic_model(M.LogisticDataset.default()),
        "zero_entry": M.finite_model(Pz, Gz),
    }


@pytest.fixture(scope="session")
def models():
    return small_models()


@pytest.fixture
def harmonic():
    return StepSchedule.harmonic()
