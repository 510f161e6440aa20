"""Per-criterion pass/fail summary for the acceptance module."""

import pytest

_results: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    rep = outcome.get_result()
    number, title = mark.args
    if rep.failed or rep.when == "call":
        prev = _results.get(number, (title, "PASS"))[1]
        verdict = "FAIL" if rep.failed or prev == "FAIL" else "PASS"
        _results[number] = (title, verdict)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, verdict = _results[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")
