"""Shared fixtures and the acceptance-criterion summary.

Tests marked ``@pytest.mark.criterion(n, "title")`` are collected into a
per-criterion pass/fail table printed at the end of the run; a criterion
passes only if every test carrying its number passes.
"""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ehrqa.kg import fixture_kg, generate_toy_ehr_kg  # noqa: E402

_CRITERIA: dict[int, dict] = {}


@pytest.fixture(scope="session")
def fixture_graph():
    return fixture_kg()


@pytest.fixture(scope="session")
def toy_graph():
    """The seed-1, 50-patient toy graph used by the larger tests."""
    return generate_toy_ehr_kg(1, 50, 2)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args[0], marker.args[1]
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "tests": 0, "detail": []})
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if report.when == "call":
            entry["tests"] += 1
        if report.failed or report.skipped:
            entry["ok"] = False
            entry["detail"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] and e["tests"] else "FAIL"
        line = f"criterion {number}: {status}  {e['title']} ({e['tests']} test(s))"
        if e["detail"]:
            line += "  failing: " + ", ".join(e["detail"])
        tr.write_line(line)
