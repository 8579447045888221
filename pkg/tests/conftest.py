import pytest

ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's verdict for the end-of-run summary."""
    results = request.config.stash[ACCEPTANCE_KEY]

    def record(number, title, ok, detail=""):
        results[number] = (title, ok, detail)
    return record


def pytest_runtest_makereport(item, call):
    # A criterion whose test failed before recording anything still shows up as FAIL.
    if call.when == "call" and call.excinfo is not None and "criterion" in item.fixturenames:
        number = item.get_closest_marker("criterion")
        results = item.config.stash[ACCEPTANCE_KEY]
        if number is not None and number.args[0] not in results:
            title = number.kwargs.get("title", item.name)
            results[number.args[0]] = (title, False, call.excinfo.exconly().splitlines()[0][:160])


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        tail = f"  [{detail}]" if detail else ""
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}{tail}")
