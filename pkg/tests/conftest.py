import pytest

# Filled in by test_acceptance as each criterion is decided; emitted after the
# run so the verdict lines survive pytest's output capture.
_criteria: dict[int, bool] = {}


@pytest.fixture(scope="session")
def criteria():
    return _criteria


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        verdict = "PASS" if _criteria[number] else "FAIL"
        terminalreporter.write_line(f"[criterion {number}] {verdict}")
