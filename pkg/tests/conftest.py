import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def record_criterion(request):
    """Log one sub-result of an acceptance criterion: record(number, ok, detail)."""
    store = request.config.stash[_RESULTS]

    def record(number, ok, detail):
        store.setdefault(number, []).append((ok, detail))
        status = "PASS" if ok is True else ("N/A" if ok is None else "FAIL")
        print(f"criterion {number:>2}: {status}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash[_RESULTS]
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        entries = store[number]
        if all(ok is None for ok, _ in entries):
            status = "N/A"
        else:
            status = "PASS" if all(ok is not False for ok, _ in entries) else "FAIL"
        detail = "; ".join(d for _, d in entries)
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
