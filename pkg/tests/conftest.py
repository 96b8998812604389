import numpy as np
import pytest

from daebranch.problems import builtin

_ACCEPTANCE = {}
_NOTES = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    from test_acceptance import CRITERIA

    tr = terminalreporter
    tr.section("acceptance criteria")
    for test_name, label in CRITERIA.items():
        outcome = _ACCEPTANCE.get(test_name)
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, "NOT RUN")
        tr.write_line(f"{status}  {label}")
    for note in _NOTES:
        tr.write_line(f"note: {note}")


@pytest.fixture
def note():
    return _NOTES.append


@pytest.fixture(scope="session")
def logistic():
    return builtin("logistic")


@pytest.fixture(scope="session")
def linear():
    return builtin("linear_test")


@pytest.fixture(scope="session")
def ex52t():
    return builtin("example52_transformed")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
