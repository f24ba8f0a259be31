import numpy as np
import pytest

from sdmpc import build_double_integrator, build_scalar_example
from sdmpc.certify import solve_care

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end of the session
ACCEPTANCE_LINES = {}


@pytest.fixture
def di():
    """Fresh double-integrator triple ``(sys, cons, cost)``."""
    return build_double_integrator()


@pytest.fixture
def scalar():
    return build_scalar_example()


@pytest.fixture
def di_lq():
    sys, cons, cost = build_double_integrator()
    lq = solve_care(sys, cost)
    return sys, cons, cost, lq


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        ok, detail = ACCEPTANCE_LINES[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
