import numpy as np
import pytest

AC_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ac_report():
    """Record one acceptance line: report(label, ok, detail)."""

    def report(label: str, ok: bool, detail: str) -> None:
        AC_RESULTS[label] = (bool(ok), detail)
        print(f"{label} {'PASS' if ok else 'FAIL'} {detail}")

    return report


def pytest_terminal_summary(terminalreporter):
    if not AC_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(AC_RESULTS):
        ok, detail = AC_RESULTS[label]
        terminalreporter.write_line(f"{label} {'PASS' if ok else 'FAIL'} {detail}")

