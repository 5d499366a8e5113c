"""Serial vs grid-parallel DBSCAN timing on synthetic encounter locations."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from proxtrace.core_types import EngineConfig, GeoPoint, unproject_local
from proxtrace.crowding import dbscan, dbscan_parallel
from proxtrace.encounter import Encounter
from proxtrace.parallel import worker_pool

ORIGIN = GeoPoint(35.1495, -90.0490)


def synthetic_encounters(n: int, seed: int = 0, blob_fraction: float = 0.6,
                         density_per_km2: float = 250.0) -> list[Encounter]:
    """``n`` encounters: Gaussian crowds over a uniform background.

    The square's side grows with ``n`` so the point density stays near
    ``density_per_km2`` regardless of size.
    """
    rng = np.random.default_rng(seed)
    side = 1000.0 * float(np.sqrt(max(n, 1) / density_per_km2))
    n_blob = int(n * blob_fraction)
    centers = rng.uniform(0, side, (max(1, n // 250), 2))
    xy = np.concatenate([
        centers[rng.integers(0, len(centers), n_blob)] + rng.normal(0, 40.0, (n_blob, 2)),
        rng.uniform(0, side, (n - n_blob, 2)),
    ])
    ids = [rng.bytes(16).hex() for _ in range(2 * n)]
    out = []
    for k, (x, y) in enumerate(xy):
        a, b = sorted((ids[2 * k], ids[2 * k + 1]))
        out.append(Encounter((a, b), 0, 0, 600_000, 31, unproject_local(x, y, ORIGIN), 620.0))
    return out


@dataclass
class BenchRow:
    path: str
    workers: int
    seconds: float
    clusters: int
    identical: bool


def run_bench(points: int = 100_000, workers: int = 4, seed: int = 0,
              cfg: EngineConfig | None = None) -> list[BenchRow]:
    cfg = cfg or EngineConfig()
    encounters = synthetic_encounters(points, seed)

    t0 = time.perf_counter()
    serial, _ = dbscan(encounters, cfg)
    serial_s = time.perf_counter() - t0
    rows = [BenchRow("serial", 1, serial_s, serial.n_clusters, True)]

    with worker_pool(workers) as pool:
        t0 = time.perf_counter()
        par, _ = dbscan_parallel(encounters, cfg, workers, executor=pool)
        par_s = time.perf_counter() - t0
    rows.append(BenchRow("grid", workers, par_s, par.n_clusters, par.labels == serial.labels))
    return rows


def format_table(rows: list[BenchRow], points: int) -> str:
    base = rows[0].seconds
    lines = [
        f"points={points} cpus={os.cpu_count()}",
        f"{'path':<8}{'workers':>8}{'seconds':>10}{'speedup':>9}{'clusters':>10}{'identical':>11}",
    ]
    for r in rows:
        lines.append(f"{r.path:<8}{r.workers:>8}{r.seconds:>10.3f}{base / r.seconds:>9.2f}"
                     f"{r.clusters:>10}{str(r.identical):>11}")
    return "\n".join(lines)
