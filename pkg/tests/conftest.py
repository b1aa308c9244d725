"""Collects the outcome of every test marked ``criterion(n)`` and prints one
summary line per acceptance criterion at the end of the session."""

import pytest

N_CRITERIA = 8
_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test belongs to acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = int(mark.args[0])
    entry = _outcomes.setdefault(n, {"passed": 0, "failed": 0, "skipped": 0, "notes": []})
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if rep.passed:
            entry["passed"] += 1
        elif rep.skipped:
            entry["skipped"] += 1
        else:
            entry["failed"] += 1
    if rep.when == "call":
        entry["notes"].extend(v for k, v in item.user_properties if k == "summary")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        e = _outcomes.get(n)
        if e is None:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
            continue
        if e["failed"]:
            status = "FAIL"
        elif e["passed"]:
            status = "PASS"
        else:
            status = "SKIPPED"
        counts = f"({e['passed']} passed, {e['failed']} failed"
        counts += f", {e['skipped']} skipped)" if e["skipped"] else ")"
        note = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {n}: {status} {counts}" + (f" {note}" if note else ""))


@pytest.fixture
def summary(record_property):
    """Attach a one-line result note to the acceptance summary."""
    def add(text):
        record_property("summary", text)
    return add
