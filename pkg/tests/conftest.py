"""Shared pytest wiring.

The acceptance suite gets one visible PASS/FAIL line per criterion, both on
the verbose test line and in the terminal summary, so a full run shows the
gate status at a glance."""


def _criterion_name(nodeid: str) -> str:
    return nodeid.split("::")[-1].replace("test_", "", 1)


def pytest_report_teststatus(report, config):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = _criterion_name(report.nodeid)
        if report.passed:
            return "passed", ".", f"ACCEPTANCE PASS {name}"
        if report.failed:
            return "failed", "F", f"ACCEPTANCE FAIL {name}"
    return None


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when == "call" and "test_acceptance" in rep.nodeid:
                status = "PASS" if rep.passed else "FAIL"
                lines.append(f"[acceptance] {status} {_criterion_name(rep.nodeid)}")
    if lines:
        terminalreporter.write_line("")
        for line in sorted(lines):
            terminalreporter.write_line(line)
