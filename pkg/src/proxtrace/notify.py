"""Daily per-user summaries, hotspot sojourns and population metrics."""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from proxtrace.core_types import (
    M_PER_DEG_LAT,
    M_PER_DEG_LON_EQUATOR,
    BeaconRecord,
    EngineConfig,
    GeoPoint,
    UserId,
    project_local,
)
from proxtrace.crowding import Hotspot
from proxtrace.encounter import Encounter
from proxtrace.validation import check_config

DEDUP_CELL_M = 100.0


def utc_date(ms: int) -> dt.date:
    return dt.datetime.fromtimestamp(ms / 1000, tz=dt.timezone.utc).date()


def day_start_ms(day: dt.date) -> int:
    return int(dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc).timestamp()) * 1000


@dataclass(frozen=True)
class DailySummary:
    user: UserId
    date: dt.date
    unique_encounters: int
    distinct_partners: int
    delta_vs_prev_day: int
    new_partners: tuple[UserId, ...]
    crowding_visits: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class PopulationMetrics:
    date: dt.date | None
    active_users: int
    avg_encounters_per_user: Fraction
    largest_event_encounters: int

    def to_json(self) -> str:
        return json.dumps({
            "date": self.date.isoformat() if self.date else None,
            "active_users": self.active_users,
            "avg_encounters_per_user": float(self.avg_encounters_per_user),
            "largest_event_encounters": self.largest_event_encounters,
        }) + "\n"


def grid_cell(p: GeoPoint, cell_m: float = DEDUP_CELL_M) -> tuple[int, int]:
    """Fixed ~``cell_m`` grid cell of a point, independent of any batch origin."""
    row = math.floor(p.lat * M_PER_DEG_LAT / cell_m)
    row_lat = (row + 0.5) * cell_m / M_PER_DEG_LAT
    col = math.floor(p.lon * math.cos(math.radians(row_lat)) * M_PER_DEG_LON_EQUATOR / cell_m)
    return row, col


def location_key(e: Encounter, cluster_of: dict[Encounter, int]):
    if e in cluster_of:
        return ("hotspot", cluster_of[e])
    return ("cell", *grid_cell(e.mean_location))


def _membership(hotspots: Iterable[Hotspot]) -> dict[Encounter, int]:
    return {e: h.cluster_id for h in hotspots for e in h.members}


def dedup_daily(encounters_of_day: Iterable[Encounter],
                hotspots: Iterable[Hotspot] = ()) -> list[Encounter]:
    """Keep the earliest encounter of each (pair, location) within a day.

    The location of an encounter is its hotspot when it belongs to one,
    otherwise its 100 m grid cell.
    """
    cluster_of = _membership(hotspots)
    kept: dict = {}
    for e in sorted(encounters_of_day,
                    key=lambda e: (e.first_in_range, e.window_start, e.last_in_range, e.pair)):
        kept.setdefault((e.pair, location_key(e, cluster_of)), e)
    return sorted(kept.values(), key=Encounter.sort_key)


def daily_summary(user: UserId, today: Sequence[Encounter], yesterday: Sequence[Encounter],
                  visits: Iterable[tuple[int, float]], cfg: EngineConfig | None = None,
                  date: dt.date | None = None) -> DailySummary:
    cfg = check_config(cfg)
    mine = [e for e in today if e.involves(user)]
    partners = {e.partner_of(user) for e in mine}
    before = [e for e in yesterday if e.involves(user)]
    partners_before = {e.partner_of(user) for e in before}
    if date is None:
        date = utc_date(mine[0].window_start) if mine else None
    return DailySummary(
        user=user,
        date=date,
        unique_encounters=len(mine),
        distinct_partners=len(partners),
        delta_vs_prev_day=len(mine) - len(before),
        new_partners=tuple(sorted(partners - partners_before)),
        crowding_visits=tuple(sorted((cid, s) for cid, s in visits if s >= cfg.sojourn_alert_s)),
    )


def sojourn_in_hotspots(user_records: Iterable[BeaconRecord], hotspots: Iterable[Hotspot],
                        cfg: EngineConfig | None = None) -> list[tuple[int, float]]:
    """Seconds between the first and last fix inside each hotspot's extent.

    A fix is inside when its Manhattan distance to the centroid is within
    the hotspot radius plus ``epsilon_m``.
    """
    cfg = check_config(cfg)
    records = list(user_records)
    out = []
    for h in sorted(hotspots, key=lambda h: h.cluster_id):
        reach = h.radius_m + cfg.epsilon_m
        times = []
        for r in records:
            x, y = project_local(r.location, h.centroid)
            if abs(x) + abs(y) <= reach:
                times.append(r.t)
        if times:
            out.append((h.cluster_id, (max(times) - min(times)) / 1000))
    return out


def population_metrics(day_summaries: Sequence[DailySummary], hotspots: Iterable[Hotspot],
                       date: dt.date | None = None) -> PopulationMetrics:
    active = len(day_summaries)
    total = sum(s.unique_encounters for s in day_summaries)
    avg = Fraction(total, active) if active else Fraction(0)
    largest = max((h.unique_encounters for h in hotspots), default=0)
    if date is None and day_summaries:
        date = day_summaries[0].date
    return PopulationMetrics(date, active, avg, largest)


SUMMARY_HEADER = ("user,date,unique_encounters,distinct_partners,delta_vs_prev_day,"
                  "new_partners,crowding_visits")


def summaries_to_csv(summaries: Iterable[DailySummary]) -> str:
    lines = [SUMMARY_HEADER]
    for s in summaries:
        visits = ";".join(f"{cid}:{sec:g}" for cid, sec in s.crowding_visits)
        lines.append(f"{s.user},{s.date.isoformat() if s.date else ''},{s.unique_encounters},"
                     f"{s.distinct_partners},{s.delta_vs_prev_day},"
                     f"{';'.join(s.new_partners)},{visits}")
    return "\n".join(lines) + "\n"
