"""Acceptance reporting: one PASS/FAIL line per criterion in the terminal summary.

Tests marked ``@pytest.mark.criterion(n, title)`` contribute to criterion
``n``; a criterion passes only if every contributing test passes. Tests may
attach a short measurement summary with ``record_property("detail", ...)``.
"""

import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config.stash[_KEY] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when != "call" and not report.failed and not report.skipped:
        return
    number, title = mark.args
    entry = item.config.stash[_KEY].setdefault(number, {"title": title, "ok": True, "details": []})
    if report.failed or report.skipped:
        entry["ok"] = False
    if report.when == "call":
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_KEY]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        entry = results[number]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"{status} criterion {number:>2}: {entry['title']}" + (f" [{detail}]" if detail else ""))
