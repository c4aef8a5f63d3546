import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "seen": False, "notes": []})
    if rep.when == "call" or rep.failed:
        entry["seen"] = True
        if rep.failed:
            entry["ok"] = False
            entry["notes"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        if not e["seen"]:
            continue
        status = "PASS" if e["ok"] else "FAIL"
        extra = f"  (failed: {', '.join(e['notes'])})" if e["notes"] else ""
        terminalreporter.write_line(f"criterion {n:>2} {status}  {e['title']}{extra}")
