import pytest

_RESULTS = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not mark.args:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if status == "SKIP" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _RESULTS.append((mark.args[0], status, mark.kwargs.get("title", item.name), detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"criterion {number} [{status}] {title}: {detail}")
