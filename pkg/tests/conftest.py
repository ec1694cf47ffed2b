"""Shared pytest hooks: per-criterion pass/fail lines for the acceptance gate."""

import pytest

_VERDICT = {"passed": "PASS", "failed": "FAIL", "error": "FAIL", "skipped": "SKIP"}
_WORST = {"PASS": 0, "SKIP": 1, "FAIL": 2}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker:
        report.acceptance_name = marker.args[0]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts: dict[str, str] = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            name = getattr(report, "acceptance_name", None)
            if name is None:
                continue
            if status == "passed" and report.when != "call":
                continue
            v = _VERDICT[status]
            if name not in verdicts or _WORST[v] > _WORST[verdicts[name]]:
                verdicts[name] = v
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for name in verdicts:
            terminalreporter.write_line(f"ACCEPTANCE {name}: {verdicts[name]}")
