import pytest

_LINES: list[str] = []
_EXTRA: list[str] = []


class Verdicts:
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(self, number: int, title: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        _LINES.append(line)
        print(line)

    def note(self, text: str) -> None:
        _EXTRA.append(text)


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for line in sorted(_LINES, key=lambda s: int(s.split()[2])):
        tr.write_line(line)
    for block in _EXTRA:
        tr.write_line("")
        for ln in block.rstrip("\n").splitlines():
            tr.write_line(ln)
