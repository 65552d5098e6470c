import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; it is printed again in the terminal summary."""

    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
