"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_OUTCOMES = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    report = outcome.get_result()
    number, title = marker.args
    passed = _OUTCOMES.get(number, (True, title))[0]
    if report.failed or (report.when == "call" and report.skipped):
        passed = False
    _OUTCOMES[number] = (passed, title)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        passed, title = _OUTCOMES[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}")
