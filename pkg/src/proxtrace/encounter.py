"""Pairwise proximity encounter detection over windowed beacon records."""

from __future__ import annotations

import csv
import io
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from proxtrace.core_types import BeaconRecord, EngineConfig, GeoPoint, Pair
from proxtrace.ingest import Window, format_float, normalize_records, window_records
from proxtrace.parallel import map_tasks
from proxtrace.validation import check_config, check_positive_int, record_problem

CSV_HEADER = ("user_a", "user_b", "window_start_ms", "t1_ms", "t2_ms", "count",
              "mean_lat", "mean_lon", "cum_s")


@dataclass(frozen=True, slots=True)
class Encounter:
    """A validated encounter of one pair inside one computation window.

    ``first_in_range``/``last_in_range`` are the first and last timestamps
    (ms) at which the reported distance was within the threshold, and
    ``mean_location`` averages the GPS fixes of exactly those exchanges.
    """

    pair: Pair
    window_start: int
    first_in_range: int
    last_in_range: int
    in_range_count: int
    mean_location: GeoPoint
    cumulative_in_range_s: float

    @property
    def user_a(self) -> str:
        return self.pair[0]

    @property
    def user_b(self) -> str:
        return self.pair[1]

    @property
    def span_s(self) -> float:
        return (self.last_in_range - self.first_in_range) / 1000

    def involves(self, user: str) -> bool:
        return user in self.pair

    def partner_of(self, user: str) -> str:
        a, b = self.pair
        if user == a:
            return b
        if user == b:
            return a
        raise ValueError(f"{user!r} is not part of {self.pair}")

    def sort_key(self):
        return (self.pair, self.window_start)


def _encounter_for_pair(pair: Pair, beacons: Sequence[BeaconRecord], window_start: int,
                        cfg: EngineConfig) -> Encounter | None:
    in_range = [b for b in beacons if b.distance_m <= cfg.delta_m]
    if len(in_range) < cfg.mu:
        return None
    t1 = min(b.t for b in in_range)
    t2 = max(b.t for b in in_range)
    if t2 - t1 < cfg.tau_ms:
        return None
    n = len(in_range)
    mean = GeoPoint(math.fsum(b.location.lat for b in in_range) / n,
                    math.fsum(b.location.lon for b in in_range) / n)
    period = float(cfg.beacon_period_s)
    cumulative = min(n * period, (t2 - t1) / 1000 + period)
    return Encounter(pair, window_start, t1, t2, n, mean, cumulative)


def _group_by_pair(records: Iterable[BeaconRecord]) -> dict[Pair, list[BeaconRecord]]:
    groups: dict[Pair, list[BeaconRecord]] = defaultdict(list)
    for rec in records:
        groups[rec.pair].append(rec)
    return groups


def detect_encounters(w: Window, cfg: EngineConfig | None = None) -> list[Encounter]:
    """Return the encounters of every pair seen in window ``w``.

    A pair qualifies when at least ``mu`` of its exchanges report a distance
    within ``delta_m`` and the first and last of those in-range exchanges are
    at least ``tau_s`` apart. At most one encounter per pair is emitted.
    """
    cfg = check_config(cfg)
    out = []
    for pair, beacons in _group_by_pair(w.records).items():
        enc = _encounter_for_pair(pair, beacons, w.start, cfg)
        if enc is not None:
            out.append(enc)
    out.sort(key=Encounter.sort_key)
    return out


def pair_shard(pair: Pair, shards: int) -> int:
    # crc32 rather than hash(): must not depend on PYTHONHASHSEED
    return zlib.crc32(f"{pair[0]}:{pair[1]}".encode("ascii")) % shards


def _detect_shard(args) -> list[Encounter]:
    window, cfg = args
    return detect_encounters(window, cfg)


def detect_encounters_parallel(w: Window, cfg: EngineConfig | None = None, shards: int = 1,
                               executor=None) -> list[Encounter]:
    """Shard ``w`` by pair hash, detect per shard and merge.

    Shards run on ``executor`` when one is given (any object with a
    ``map`` method, e.g. a process pool); otherwise in the calling process.
    The result is identical to :func:`detect_encounters`.
    """
    cfg = check_config(cfg)
    shards = check_positive_int(shards, "shards")
    parts: list[list[BeaconRecord]] = [[] for _ in range(shards)]
    for rec in w.records:
        parts[pair_shard(rec.pair, shards)].append(rec)
    tasks = [(Window(w.start, w.end, tuple(p)), cfg) for p in parts if p]
    out = [enc for part in map_tasks(_detect_shard, tasks, executor) for enc in part]
    out.sort(key=Encounter.sort_key)
    return out


def detect_all(records: Iterable[BeaconRecord], cfg: EngineConfig | None = None,
               shards: int = 1, executor=None) -> list[Encounter]:
    """Window ``records`` and detect encounters in every window."""
    cfg = check_config(cfg)
    out = []
    for w in window_records(records, cfg.window_s):
        out.extend(detect_encounters_parallel(w, cfg, shards, executor))
    return out


class EncounterDetector(TransformerMixin, BaseEstimator):
    """Estimator wrapper turning beacon records into encounters.

    ``fit`` only validates the parameters and the input records; the
    detection itself is stateless, so ``transform`` can be called on any
    batch of records. Records may be given in any pair orientation.

    Parameters
    ----------
    delta_m, tau_s, mu, window_s, beacon_period_s :
        Same meaning as the fields of :class:`~proxtrace.EngineConfig`.
    n_shards : int
        Number of pair-hash shards used per window.
    """

    def __init__(self, delta_m=12.0, tau_s=600, mu=10, window_s=3600, beacon_period_s=20,
                 n_shards=1):
        self.delta_m = delta_m
        self.tau_s = tau_s
        self.mu = mu
        self.window_s = window_s
        self.beacon_period_s = beacon_period_s
        self.n_shards = n_shards

    def _config(self) -> EngineConfig:
        return EngineConfig(delta_m=self.delta_m, tau_s=self.tau_s, mu=self.mu,
                            window_s=self.window_s, beacon_period_s=self.beacon_period_s)

    def _check_records(self, X) -> tuple[BeaconRecord, ...]:
        records = []
        for rec in X:
            if not isinstance(rec, BeaconRecord):
                raise TypeError(f"expected BeaconRecord, got {type(rec).__name__}")
            if rec.user_a > rec.user_b:
                rec = BeaconRecord(rec.user_b, rec.user_a, rec.t, rec.distance_m, rec.location)
            problem = record_problem(rec)
            if problem:
                raise ValueError(f"invalid record {rec}: {problem}")
            records.append(rec)
        return normalize_records(records)[0]

    def fit(self, X, y=None):
        self.config_ = self._config()
        check_positive_int(self.n_shards, "n_shards")
        self.n_records_ = len(self._check_records(X))
        return self

    def transform(self, X):
        if not hasattr(self, "config_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit before transform")
        return detect_all(self._check_records(X), self.config_, self.n_shards)


def encounters_to_csv(encounters: Iterable[Encounter], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(CSV_HEADER)
    for e in encounters:
        writer.writerow([
            e.user_a, e.user_b, e.window_start, e.first_in_range, e.last_in_range,
            e.in_range_count, format_float(e.mean_location.lat),
            format_float(e.mean_location.lon), format_float(e.cumulative_in_range_s),
        ])
    return buf.getvalue()


def encounters_from_csv(text: str) -> list[Encounter]:
    rows = csv.reader(io.StringIO(text))
    out = []
    for row in rows:
        if not row or tuple(row) == CSV_HEADER:
            continue
        a, b, ws, t1, t2, n, lat, lon, cum = row
        out.append(Encounter((a, b), int(ws), int(t1), int(t2), int(n),
                             GeoPoint(float(lat), float(lon)), float(cum)))
    return out
