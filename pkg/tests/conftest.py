"""Collects acceptance-criterion outcomes and prints one line per criterion."""

from collections import OrderedDict

import pytest

_OUTCOMES: "OrderedDict[int, dict]" = OrderedDict()


def _entry(number: int, title: str) -> dict:
    return _OUTCOMES.setdefault(number, {"title": title, "passed": True, "ran": False, "details": []})


@pytest.fixture
def note(request):
    """Attach a measured value to the current criterion's summary line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str) -> None:
        if marker is not None:
            _entry(*marker.args)["details"].append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _entry(*marker.args)
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        e = _OUTCOMES[number]
        status = "PASS" if e["passed"] and e["ran"] else ("FAIL" if e["ran"] or not e["passed"] else "SKIP")
        line = f"[{status}] {number:2d}. {e['title']}"
        if e["details"]:
            line += "  (" + "; ".join(e["details"]) + ")"
        terminalreporter.write_line(line)
