import numpy as np
import pytest

# acceptance-criterion outcomes, filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    """Store an outcome; ``passed=None`` marks a criterion that was not run."""
    ACCEPTANCE[criterion] = (None if passed is None else bool(passed), detail)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("abc")), k)):
        ok, detail = ACCEPTANCE[key]
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        terminalreporter.write_line(f"criterion {key:>3}: {status}  {detail}")
