"""Suite-wide reporting: one pass/fail line per acceptance criterion."""

import re

_CRITERION = re.compile(r"test_criterion_(\d+)")
_outcomes: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    match = _CRITERION.search(report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    slug = report.nodeid.split("::")[-1]
    if report.when == "call":
        _outcomes[number] = (report.outcome, slug)
    elif report.when == "setup" and report.outcome != "passed":
        # setup error or skip counts as a non-pass for the criterion
        _outcomes[number] = (report.outcome, slug)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        outcome, slug = _outcomes[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict} ({slug})")
