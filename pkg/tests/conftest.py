import pytest

# criterion number -> (label, passed, detail); filled by the acceptance tests
CRITERIA = {}


@pytest.fixture
def record_criterion():
    def record(number, label, passed, detail=""):
        CRITERIA[number] = (label, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        label, passed, detail = CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} {status}: {label}  {detail}".rstrip())
