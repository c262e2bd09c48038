import pytest

CRITERIA_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training runs (acceptance criteria 7-9)")


@pytest.fixture(scope="session")
def criterion_log():
    def log(number: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        CRITERIA_LINES.append(line)
        print(line, flush=True)
        return ok
    return log


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
