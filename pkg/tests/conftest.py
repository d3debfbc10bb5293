from pathlib import Path

import numpy as np
import pytest

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

_acceptance: dict[str, tuple[str, str]] = {}


@pytest.fixture
def configs_dir() -> Path:
    return CONFIGS


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    marker = getattr(report, "_acceptance_name", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _acceptance[report.nodeid] = (marker, status)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        report._acceptance_name = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _acceptance.values():
        terminalreporter.write_line(f"{status}  {name}")
    n_pass = sum(s == "PASS" for _, s in _acceptance.values())
    terminalreporter.write_line(f"{n_pass}/{len(_acceptance)} criteria met")
