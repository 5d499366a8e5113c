"""Random inputs shared by the unit and acceptance tests."""

import itertools

import numpy as np

from conftest import BASE_LAT, BASE_LON, enc, uid
from proxtrace.core_types import BeaconRecord, GeoPoint
from proxtrace.ingest import Window, normalize_records


def random_window(rng: np.random.Generator, max_users=12, max_beacons=200, start=0,
                  width_ms=3_600_000):
    """A window whose pairs emit bursts of beacons at the 20 s cadence."""
    n_users = int(rng.integers(2, max_users + 1))
    users = [uid(f"w{int(rng.integers(1 << 30))}-{k}") for k in range(n_users)]
    pairs = list(itertools.combinations(users, 2))
    rng.shuffle(pairs)
    records = []
    for a, b in pairs[: int(rng.integers(1, min(len(pairs), 8) + 1))]:
        slots = int(rng.integers(1, 60))
        first = int(rng.integers(0, 180 - slots + 1))
        near = rng.uniform(0.3, 1.0)
        lat = BASE_LAT + rng.normal(0, 1e-3)
        lon = BASE_LON + rng.normal(0, 1e-3)
        for k in range(first, first + slots):
            if len(records) >= max_beacons:
                break
            if rng.uniform() < 0.15:
                continue
            d = float(rng.uniform(0, 12) if rng.uniform() < near else rng.uniform(10, 30))
            if rng.uniform() < 0.05:
                d = 12.0
            x, y = (a, b) if rng.uniform() < 0.5 else (b, a)
            records.append(BeaconRecord.normalized(
                x, y, start + k * 20_000, d,
                lat + float(rng.normal(0, 5e-5)), lon + float(rng.normal(0, 5e-5))))
    records, _ = normalize_records(records)
    return Window(start, start + width_ms, records)


def random_points(rng: np.random.Generator, max_points=300, side_m=2000.0):
    """Encounters scattered as uniform noise plus a few Gaussian crowds."""
    from proxtrace.core_types import unproject_local

    n = int(rng.integers(1, max_points + 1))
    n_blobs = int(rng.integers(0, 6))
    centers = rng.uniform(0, side_m, (max(n_blobs, 1), 2))
    origin = GeoPoint(BASE_LAT, BASE_LON)
    out = []
    for k in range(n):
        if n_blobs and rng.uniform() < 0.7:
            x, y = centers[int(rng.integers(n_blobs))] + rng.normal(0, 25, 2)
        else:
            x, y = rng.uniform(0, side_m, 2)
        p = unproject_local(float(x), float(y), origin)
        out.append(enc(uid(f"p{k}a{int(rng.integers(1 << 30))}"), uid(f"p{k}b"), 0,
                       lat=p.lat, lon=p.lon))
    return out


def straddling_points(rng: np.random.Generator, cell_m=500.0, eps=50.0):
    """Chains of points every 10 m crossing grid-cell boundaries."""
    from proxtrace.core_types import unproject_local

    origin = GeoPoint(BASE_LAT, BASE_LON)
    out = []
    k = 0
    for _ in range(int(rng.integers(1, 4))):
        vertical = rng.uniform() < 0.5
        line = cell_m * int(rng.integers(1, 3)) + rng.uniform(-5, 5)
        along = rng.uniform(0, 3 * cell_m)
        for step in range(-8, 9):
            off = line + step * 10.0
            x, y = (off, along) if vertical else (along, off)
            for _dup in range(int(rng.integers(1, 3))):
                p = unproject_local(x + rng.normal(0, 1), y + rng.normal(0, 1), origin)
                out.append(enc(uid(f"s{k}"), uid(f"s{k}b"), 0, lat=p.lat, lon=p.lon))
                k += 1
    # anchor points pin the grid origin near (0, 0) so cell lines fall where intended
    for x, y in ((0.0, 0.0), (3 * cell_m, 3 * cell_m)):
        p = unproject_local(x, y, origin)
        out.append(enc(uid(f"anchor{x}"), uid(f"anchor{x}b"), 0, lat=p.lat, lon=p.lon))
    return out
