"""Shared test plumbing.

The acceptance tests report one verdict line per criterion; collecting them
here and emitting them in the terminal summary keeps the lines visible even
though pytest captures ordinary stdout.
"""

_criterion_lines = []


def record_criterion(num: int, passed: bool, text: str) -> None:
    _criterion_lines.append((num, passed, text))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for num, passed, text in sorted(_criterion_lines):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{num:02d}] {verdict} {text}")
