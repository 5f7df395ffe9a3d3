import pytest

# criterion number -> (passed, description)
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion: ``criterion(n, passed, text)``."""
    def record(n, passed, text):
        ACCEPTANCE[n] = (bool(passed), text)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} {text}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {text}")
