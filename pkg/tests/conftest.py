import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import _report  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if _report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in _report.LINES:
            terminalreporter.write_line(line)
