import pytest

_VERDICTS: list[tuple[int, bool, str]] = []


class Criterion:
    """Records one acceptance verdict; the test still asserts on its own."""

    def __init__(self, number: int):
        self.number = number

    def report(self, ok: bool, detail: str) -> bool:
        _VERDICTS.append((self.number, bool(ok), detail))
        print(f"CRITERION {self.number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
