import warnings

import pytest

from indiffbond.params import FellerWarning

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []
    warnings.simplefilter("error", FellerWarning)


@pytest.fixture
def record_criterion(request):
    """Log one pass/fail line for an acceptance criterion."""
    lines = request.config.stash[_CRITERIA]

    def record(number: int, passed: bool, detail: str) -> None:
        lines.append((number, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(lines, key=lambda item: item[0]):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {detail}")
