import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion verified by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "notes": []})
    if rep.failed:
        entry["outcomes"].append("failed")
    elif rep.skipped:
        entry["outcomes"].append("skipped")
        entry["notes"].append(str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else "")
    elif rep.when == "call":
        entry["outcomes"].append("passed")


def _verdict(outcomes):
    if "failed" in outcomes:
        return "FAIL"
    if "passed" in outcomes and "skipped" not in outcomes:
        return "PASS"
    if "passed" in outcomes:
        return "PARTIAL"
    return "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = _verdict(entry["outcomes"])
        note = next((n for n in entry["notes"] if n), "")
        suffix = f" ({note.removeprefix('Skipped: ')})" if verdict in ("SKIP", "PARTIAL") and note else ""
        terminalreporter.write_line(f"criterion {number} [{verdict}] {entry['title']}{suffix}")
