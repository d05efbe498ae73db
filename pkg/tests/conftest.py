import pytest

_verdicts: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by the test")


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the test's acceptance criterion and return the flag."""
    number = request.node.get_closest_marker("criterion").args[0]

    def record(ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _verdicts[number] = line
        print(line, flush=True)
        return ok
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and rep.when == "call" and rep.failed and marker.args[0] not in _verdicts:
        # the test died before it could report
        _verdicts[marker.args[0]] = f"FAIL criterion {marker.args[0]}: {call.excinfo.typename}"


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_verdicts):
            terminalreporter.write_line(_verdicts[n])
