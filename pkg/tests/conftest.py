"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n = marker.args[0]
    entry = _OUTCOMES.setdefault(n, {"title": (item.function.__doc__ or item.name).strip().splitlines()[0],
                                     "ok": True, "seconds": 0.0, "ran": False})
    if report.when in ("setup", "call"):
        # fixture setup counts too: criterion 8 trains its models there
        entry["seconds"] += report.duration
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False
    if report.skipped:
        entry["skipped"] = True


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        e = _OUTCOMES[n]
        if e.get("skipped") or not e["ran"]:
            status = "SKIP" if e["ok"] else "FAIL"
        else:
            status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status}  {e['title']} ({e['seconds']:.1f}s)")
