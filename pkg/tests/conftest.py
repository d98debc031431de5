"""Print one pass/fail line per acceptance criterion at the end of the run."""

import re

_RESULTS = {}
_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.when == "call" or report.failed or report.skipped:
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        if _RESULTS.get(key) in (None, "PASS"):
            _RESULTS[key] = outcome
        notes = dict(report.user_properties)
        if notes:
            _RESULTS[key + ("notes",)] = notes


def pytest_terminal_summary(terminalreporter):
    keys = sorted(k for k in _RESULTS if len(k) == 2)
    if not keys:
        return
    terminalreporter.section("acceptance criteria")
    for num, name in keys:
        notes = _RESULTS.get((num, name, "notes"), {})
        detail = "  ".join(f"{k}={v}" for k, v in notes.items())
        terminalreporter.write_line(f"criterion {num:2d} {name:<28} {_RESULTS[(num, name)]}  {detail}".rstrip())
