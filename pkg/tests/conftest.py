import shutil
from pathlib import Path

import pytest

DEMO_DIR = Path(__file__).resolve().parent.parent / "demo"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"
WORKED_EXAMPLE = "US20170263445A1"

_acceptance_results = []


@pytest.fixture
def demo(tmp_path):
    """A private copy of the demo directory (config, script, fixtures, corpus)."""
    dst = tmp_path / "demo"
    shutil.copytree(DEMO_DIR, dst, ignore=shutil.ignore_patterns("out"))
    return dst


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        number, title = marker.args
        _acceptance_results.append((number, title, item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, name, outcome in sorted(_acceptance_results):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} ({name})")
