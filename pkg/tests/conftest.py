from collections import defaultdict

import pytest

_outcomes = defaultdict(list)


def pytest_runtest_logreport(report):
    number = getattr(report, "acceptance", None)
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if hasattr(report, "wasxfail"):
            # strict xfail: a known, analysed shortfall
            _outcomes[number].append("xfail" if report.outcome == "skipped" else "xpass")
        else:
            _outcomes[number].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        outcome.get_result().acceptance = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        seen = _outcomes[number]
        if all(o == "skipped" for o in seen):
            verdict = "SKIP"
        elif all(o in ("passed", "skipped") for o in seen):
            verdict = "PASS"
        else:
            verdict = "FAIL"
        detail = ", ".join(f"{seen.count(o)} {o}" for o in sorted(set(seen)))
        terminalreporter.write_line(f"criterion {number:2d}: {verdict} ({detail})")
