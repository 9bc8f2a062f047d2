"""Collects exit-criterion outcomes and prints one line per criterion."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (report.when == "call" or report.failed or report.skipped):
        return
    entry = _RESULTS.setdefault(marker.args[0], {"status": "PASS", "details": []})
    # an expected failure still counts as a failed criterion
    if report.failed or (report.skipped and hasattr(report, "wasxfail")):
        entry["status"] = "FAIL"
    elif report.skipped and entry["status"] == "PASS":
        entry["status"] = "SKIP"
    if report.when == "call":
        entry["details"] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        entry = _RESULTS[n]
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {n}: {entry['status']}" + (f"  ({detail})" if detail else ""))
