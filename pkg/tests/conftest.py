import random

import pytest

from vdic.credentials import PresentationStore
from vdic.identity import LedgerStore
from vdic.scenario import new_actor


@pytest.fixture
def ledger():
    return LedgerStore()


@pytest.fixture
def store():
    return PresentationStore()


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def make_actor(ledger, rng):
    def make(name=""):
        return new_actor(ledger, rng, name)

    return make


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and fail the test on FAIL."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(title: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} {title}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
