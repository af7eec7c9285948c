"""Collects the one-line acceptance verdicts and prints them after the run."""

AC_LINES = []


def pytest_runtest_logreport(report):
    if report.when == "call":
        AC_LINES.extend(value for name, value in report.user_properties if name == "acceptance")


def pytest_terminal_summary(terminalreporter):
    if AC_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(AC_LINES, key=lambda s: int(s.split()[0].split("-")[1])):
            terminalreporter.write_line(line)
