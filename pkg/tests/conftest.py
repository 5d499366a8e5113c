import hashlib

import pytest

from proxtrace.core_types import BeaconRecord, EngineConfig, GeoPoint
from proxtrace.encounter import Encounter
from proxtrace.parallel import worker_pool

BASE_LAT, BASE_LON = 35.1495, -90.0490


def uid(name) -> str:
    """Deterministic 32-hex id for a readable test name."""
    return hashlib.md5(str(name).encode()).hexdigest()


def rec(a, b, t_s, d, lat=BASE_LAT, lon=BASE_LON):
    return BeaconRecord.normalized(a, b, int(t_s * 1000), d, lat, lon)


def enc(a, b, window_start=0, t1=0, t2=600_000, lat=BASE_LAT, lon=BASE_LON, count=31,
        cum=620.0):
    pair = (a, b) if a < b else (b, a)
    return Encounter(pair, window_start, t1, t2, count, GeoPoint(lat, lon), cum)


@pytest.fixture
def cfg():
    return EngineConfig()


@pytest.fixture(scope="session")
def pools():
    """One process pool per worker count, shared across the session."""
    opened = {}
    stack = []
    for n in (2, 4, 8):
        cm = worker_pool(n)
        opened[n] = cm.__enter__()
        stack.append(cm)
    opened[1] = None
    yield opened
    for cm in stack:
        cm.__exit__(None, None, None)


_VERDICTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the assertion itself stays in the test."""
    def record(name: str, ok: bool, detail: str = ""):
        _VERDICTS.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
