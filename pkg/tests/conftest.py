import pytest

# criterion number -> (passed, detail, sampling steps used or None)
ACCEPTANCE: dict[int, tuple[bool, str, int | None]] = {}


@pytest.fixture
def record():
    def _record(number: int, passed: bool, detail: str, steps: int | None = None) -> bool:
        ACCEPTANCE[number] = (bool(passed), detail, steps)
        print(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail, _ = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}")
