from __future__ import annotations

import pytest

ACCEPTANCE_COUNT = 10
_verdicts: dict = {}
_errored: list = []


@pytest.fixture
def criterion(request):
    """Record the verdict of an acceptance criterion, then assert it."""
    recorded = []

    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        _verdicts[number] = (title, bool(passed), detail)
        recorded.append(number)
        print(f"{'PASS' if passed else 'FAIL'} [{number}] {title}: {detail}")
        assert passed, detail

    yield record
    if not recorded:
        _errored.append(request.node.name)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts and not _errored:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        if n in _verdicts:
            title, ok, detail = _verdicts[n]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{n}] {title}: {detail}")
        else:
            terminalreporter.write_line(f"---- [{n}] not run in this session")
    for name in _errored:
        terminalreporter.write_line(f"FAIL {name}: raised before reaching a verdict")
