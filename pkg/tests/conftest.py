import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[str, str] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_(a\d)_(\w+)", report.nodeid)
    if not m:
        return
    key = f"{m.group(1).upper()} {m.group(2)}"
    if report.when == "call" or report.outcome != "passed":
        if _CRITERIA.get(key) != "FAIL":
            _CRITERIA[key] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        terminalreporter.write_line(f"{_CRITERIA[key]}  {key}")
