"""Per-criterion PASS/FAIL summary for tests marked ``@pytest.mark.criterion(n)``."""

import pytest

CRITERIA = {
    1: "Gini correctness",
    2: "Convolution properties",
    3: "Renderer analytics",
    4: "S/D maps",
    5: "Shadow augmentation",
    6: "Autodiff",
    7: "Learning",
    8: "Albedo",
    9: "Determinism",
}

_outcomes: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    ok = _outcomes.get(n, True)
    if report.failed or (report.when == "call" and report.skipped):
        ok = False
    _outcomes[n] = ok


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        status = "PASS" if _outcomes[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n} ({CRITERIA[n]}): {status}")
