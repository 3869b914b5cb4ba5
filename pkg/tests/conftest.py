import pytest

_LINES: dict[str, str] = {}


@pytest.fixture
def record():
    """record(key, ok, detail): one PASS/FAIL line per acceptance criterion."""

    def _record(key: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}"
        _LINES[key] = line
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES, key=lambda k: int(k.split()[0])):
        terminalreporter.write_line(_LINES[key])
