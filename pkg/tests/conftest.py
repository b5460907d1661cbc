import pytest

from lyocert.comparison import ScalarFunction
from lyocert.system import SystemDef

# criterion number -> (passed, description); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {desc}")


@pytest.fixture(scope="session")
def stable():
    return SystemDef.from_catalogue("scalar_stable")


@pytest.fixture(scope="session")
def unstable():
    return SystemDef.from_catalogue("scalar_unstable")


@pytest.fixture(scope="session")
def bilinear():
    return SystemDef.from_catalogue("bilinear")


@pytest.fixture(scope="session")
def rho():
    return ScalarFunction.closed_form("min(r, 1)", "K")


@pytest.fixture(scope="session")
def bounded_alpha():
    return ScalarFunction.closed_form("r/(1+r^2)", "K")
