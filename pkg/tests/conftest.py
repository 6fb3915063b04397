from __future__ import annotations

import pytest

# criterion number -> (passed, detail); filled by the acceptance tests
_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Record the outcome of one acceptance criterion and return whether it passed."""

    def _record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"{title}: {detail}"
        _ACCEPTANCE[number] = (bool(passed), line)
        print(f"{'PASS' if passed else 'FAIL'} [{number:2d}] {line}")
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, line = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{number:2d}] {line}")
