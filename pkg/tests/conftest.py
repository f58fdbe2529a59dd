import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; it is echoed now and repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(num: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
