"""Encounter graph and exposure queries for reported positive users."""

from __future__ import annotations

import io
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from proxtrace.core_types import EngineConfig, Pair, UserId
from proxtrace.encounter import Encounter
from proxtrace.exceptions import InvalidQueryError
from proxtrace.validation import check_config

EXPOSURE_HEADER = "user,hop,via_encounters,earliest_ms,latest_ms"


@dataclass
class EncounterGraph:
    """Users as nodes; every encounter is kept as a parallel edge of its pair."""

    nodes: set[UserId] = field(default_factory=set)
    edges: dict[Pair, list[Encounter]] = field(default_factory=lambda: defaultdict(list))

    def add(self, encounters: Iterable[Encounter]) -> "EncounterGraph":
        for e in encounters:
            self.nodes.update(e.pair)
            self.edges[e.pair].append(e)
        return self

    def multiplicity(self, a: UserId, b: UserId) -> int:
        key = (a, b) if a < b else (b, a)
        return len(self.edges.get(key, ()))

    def neighbours(self) -> dict[UserId, dict[UserId, list[Encounter]]]:
        adj: dict[UserId, dict[UserId, list[Encounter]]] = defaultdict(dict)
        for (a, b), encs in self.edges.items():
            adj[a][b] = encs
            adj[b][a] = encs
        return adj


@dataclass(frozen=True)
class HealthReport:
    user: UserId
    symptom_onset: int
    reported_at: int

    def __post_init__(self):
        if self.symptom_onset > self.reported_at:
            raise ValueError("symptom onset cannot be after the report time")


@dataclass(frozen=True)
class Exposure:
    user: UserId
    hop: int
    via_encounters: int
    earliest: int
    latest: int


@dataclass(frozen=True)
class ExposureResult:
    index_user: UserId
    interval: tuple[int, int]
    exposed: tuple[Exposure, ...]
    is_sensitive: bool = True

    @property
    def users(self) -> list[UserId]:
        return [x.user for x in self.exposed]


def build_graph(encounters: Iterable[Encounter]) -> EncounterGraph:
    return EncounterGraph().add(encounters)


def lookback_interval(report: HealthReport, cfg: EngineConfig) -> tuple[int, int]:
    """Closed interval of encounter window starts that count for ``report``."""
    end = report.reported_at if cfg.include_post_onset else report.symptom_onset
    return report.symptom_onset - cfg.lookback_ms, end


def trace(g: EncounterGraph, report: HealthReport, cfg: EngineConfig | None = None,
          max_hops: int = 1) -> ExposureResult:
    """Users reachable from the reported user through in-interval encounters.

    Hop 1 are direct contacts; each further hop expands from the users found
    at the previous one, with the same absolute time interval at every hop.
    ``via_encounters``, ``earliest`` and ``latest`` describe the encounters
    linking a user to the previous hop.
    """
    cfg = check_config(cfg)
    if isinstance(max_hops, bool) or int(max_hops) != max_hops or max_hops < 1:
        raise InvalidQueryError(f"max_hops must be >= 1, got {max_hops!r}")
    lo, hi = lookback_interval(report, cfg)
    if report.user not in g.nodes:
        return ExposureResult(report.user, (lo, hi), ())

    adj = g.neighbours()
    seen = {report.user}
    frontier = [report.user]
    exposed: list[Exposure] = []
    for hop in range(1, int(max_hops) + 1):
        links: dict[UserId, list[Encounter]] = defaultdict(list)
        for u in frontier:
            for v, encs in adj[u].items():
                if v in seen:
                    continue
                links[v].extend(e for e in encs if lo <= e.window_start <= hi)
        found = sorted(v for v, encs in links.items() if encs)
        for v in found:
            encs = links[v]
            exposed.append(Exposure(v, hop, len(encs),
                                    min(e.first_in_range for e in encs),
                                    max(e.last_in_range for e in encs)))
        if not found:
            break
        seen.update(found)
        frontier = found
    return ExposureResult(report.user, (lo, hi), tuple(exposed))


def cumulative_contact_alert(encounters_of_day: Iterable[Encounter], positive: UserId,
                             cfg: EngineConfig | None = None) -> list[UserId]:
    """Users whose summed in-range time with ``positive`` reaches the alert threshold."""
    cfg = check_config(cfg)
    totals: dict[UserId, float] = defaultdict(float)
    for e in encounters_of_day:
        if e.involves(positive):
            totals[e.partner_of(positive)] += e.cumulative_in_range_s
    return sorted(u for u, s in totals.items() if s >= cfg.sojourn_alert_s)


def exposure_to_csv(result: ExposureResult) -> str:
    buf = io.StringIO()
    buf.write(f"# sensitive={'true' if result.is_sensitive else 'false'}\n")
    buf.write(EXPOSURE_HEADER + "\n")
    for x in result.exposed:
        buf.write(f"{x.user},{x.hop},{x.via_encounters},{x.earliest},{x.latest}\n")
    return buf.getvalue()
