import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}


@pytest.fixture
def record():
    """``record(label, passed, detail)`` logs one acceptance line for the summary."""
    def _record(label, passed, detail=""):
        _RESULTS[label] = (bool(passed), detail)
        print(f"ACCEPTANCE {label}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return _record


def _sort_key(label):
    head = label.split()[0]
    num = "".join(ch for ch in head if ch.isdigit())
    return (int(num) if num else 99, label)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_RESULTS, key=_sort_key):
        ok, detail = _RESULTS[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
