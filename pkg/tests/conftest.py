import pytest

from snailtwpa.dispersion import calibrate

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def device():
    return calibrate().device


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""

    def record(number, passed, detail):
        line = f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
