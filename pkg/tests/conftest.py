import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

_ACCEPTANCE: list[str] = []


@pytest.fixture
def report_criterion():
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""

    def record(number: int, passed: bool, text: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {text}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
