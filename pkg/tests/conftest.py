import pytest

_RESULTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k, title): acceptance criterion k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    k, title = mark.args
    if hasattr(rep, "wasxfail"):
        status = "FAIL (known, see README)"
    elif rep.passed:
        status = "PASS"
    else:
        status = "FAIL"
    prev = _RESULTS.get(k, (title, "PASS"))[1]
    if prev != "PASS" and status == "PASS":
        status = prev
    _RESULTS[k] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        title, status = _RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {title}: {status}")
