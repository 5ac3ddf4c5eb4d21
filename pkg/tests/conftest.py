"""Shared hooks: acceptance checks report into a per-criterion summary."""

from collections import OrderedDict

import pytest

_KEY = pytest.StashKey[OrderedDict]()


def pytest_configure(config):
    config.stash[_KEY] = OrderedDict()


@pytest.fixture
def criterion(request):
    """``criterion(number, passed, detail)`` records one part of an acceptance criterion."""
    store = request.config.stash[_KEY]

    def record(number, passed, detail):
        store.setdefault(number, []).append((bool(passed), detail))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_KEY, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        parts = store[number]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
