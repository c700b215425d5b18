import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lamp.scenario import load_scenario  # noqa: E402

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def line3():
    return load_scenario(SCENARIOS / "line3.yaml")


@pytest.fixture
def line3_calibrated():
    return load_scenario(SCENARIOS / "line3_calibrated.yaml")


@pytest.fixture
def scenarios_dir():
    return SCENARIOS


_acceptance: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): exit criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _acceptance[n] = (title, "PASS" if rep.outcome == "passed" else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        title, status = _acceptance[n]
        terminalreporter.write_line(f"[{status}] {n}. {title}")
