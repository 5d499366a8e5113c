"""Shared value types: identifiers, geo points, beacon records and engine config.

Timestamps are plain ``int`` milliseconds since the Unix epoch (UTC) and user
ids are 32-character lowercase hex strings; both are validated by the helpers
in :mod:`proxtrace.validation` rather than wrapped in classes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Mapping, Tuple

import numpy as np

from proxtrace.exceptions import InvalidConfigError, SelfBeaconError

UserId = str
Timestamp = int
Pair = Tuple[str, str]

# meters per degree used by the local equirectangular projection
M_PER_DEG_LON_EQUATOR = 111320.0
M_PER_DEG_LAT = 110540.0
EARTH_RADIUS_M = 6371008.8

MS_PER_S = 1000
MS_PER_DAY = 86_400_000


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float


@dataclass(frozen=True, slots=True)
class BeaconRecord:
    """One beacon exchange between two devices plus the GPS fix taken with it.

    ``user_a < user_b`` always holds for records coming out of ingest; use
    :func:`BeaconRecord.normalized` to build one from an arbitrary pair.
    """

    user_a: UserId
    user_b: UserId
    t: Timestamp
    distance_m: float
    location: GeoPoint

    @classmethod
    def normalized(cls, a: UserId, b: UserId, t: int, distance_m: float,
                   lat: float, lon: float) -> "BeaconRecord":
        ua, ub = canonical_pair(a, b)
        return cls(ua, ub, int(t), float(distance_m), GeoPoint(float(lat), float(lon)))

    @property
    def pair(self) -> Pair:
        return (self.user_a, self.user_b)

    def sort_key(self):
        return (self.t, self.user_a, self.user_b, self.distance_m,
                self.location.lat, self.location.lon)


_POSITIVE_FIELDS = (
    "delta_m", "tau_s", "mu", "epsilon_m", "min_pts", "crowding_density_threshold",
    "lookback_days", "window_s", "beacon_period_s", "sojourn_alert_s", "grid_cell_m",
)
MERGE_RULES = ("core", "centroid")


@dataclass(frozen=True)
class EngineConfig:
    """Tunable parameters of the whole engine.

    Parameters
    ----------
    delta_m : float
        Reported beacon distance at or below which an exchange counts as in range.
    tau_s : float
        Minimum span between first and last in-range exchange of an encounter.
    mu : int
        Minimum number of in-range exchanges for an encounter.
    epsilon_m, min_pts :
        DBSCAN neighborhood radius (Manhattan, meters) and core-point count.
    crowding_density_threshold : float
        Unique encounters per 10 m^2 at or above which a cluster is a hotspot.
    lookback_days : float
        Tracing lookback before symptom onset.
    window_s : int
        Length of the batch computation window.
    beacon_period_s : float
        Nominal beacon cadence.
    sojourn_alert_s : float
        Hotspot sojourn and cumulative contact alert threshold.
    grid_cell_m : float
        Cell side used by the grid-partitioned DBSCAN.
    include_post_onset : bool
        Extend the tracing window up to ``reported_at`` instead of onset.
    merge_rule : {"core", "centroid"}
        Cross-cell merge rule for the grid DBSCAN. ``"core"`` is exact.
    """

    delta_m: float = 12.0
    tau_s: float = 600
    mu: int = 10
    epsilon_m: float = 50.0
    min_pts: int = 5
    crowding_density_threshold: float = 1.0
    lookback_days: float = 14
    window_s: int = 3600
    beacon_period_s: float = 20
    sojourn_alert_s: float = 600
    grid_cell_m: float = 500.0
    include_post_onset: bool = False
    merge_rule: str = "core"

    def __post_init__(self):
        for name in _POSITIVE_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidConfigError(f"{name} must be a number, got {value!r}")
            if not math.isfinite(value) or value <= 0:
                raise InvalidConfigError(f"{name} must be finite and > 0, got {value!r}")
        for name in ("mu", "min_pts", "window_s"):
            if int(getattr(self, name)) != getattr(self, name):
                raise InvalidConfigError(f"{name} must be an integer")
        if self.tau_s > self.window_s:
            raise InvalidConfigError("tau_s must not exceed window_s")
        if self.epsilon_m >= self.grid_cell_m:
            raise InvalidConfigError("epsilon_m must be smaller than grid_cell_m")
        if self.merge_rule not in MERGE_RULES:
            raise InvalidConfigError(f"merge_rule must be one of {MERGE_RULES}")
        if not isinstance(self.include_post_onset, bool):
            raise InvalidConfigError("include_post_onset must be a boolean")

    @property
    def window_ms(self) -> int:
        return int(self.window_s) * MS_PER_S

    @property
    def tau_ms(self) -> float:
        return self.tau_s * MS_PER_S

    @property
    def lookback_ms(self) -> int:
        return int(round(self.lookback_days * MS_PER_DAY))

    def replace(self, **changes: Any) -> "EngineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "EngineConfig":
        """Build a config from string values, coercing to each field's type."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, raw in values.items():
            if key not in fields:
                raise InvalidConfigError(f"unknown config key {key!r}")
            default = fields[key].default
            raw = raw.strip() if isinstance(raw, str) else raw
            try:
                if isinstance(default, bool):
                    if isinstance(raw, bool):
                        kwargs[key] = raw
                    elif str(raw).lower() in ("true", "1", "yes"):
                        kwargs[key] = True
                    elif str(raw).lower() in ("false", "0", "no"):
                        kwargs[key] = False
                    else:
                        raise ValueError(raw)
                elif isinstance(default, str):
                    kwargs[key] = str(raw).strip("\"'")
                elif isinstance(default, int):
                    number = float(raw)
                    kwargs[key] = int(number) if number.is_integer() else number
                else:
                    kwargs[key] = float(raw)
            except ValueError:
                raise InvalidConfigError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def canonical_pair(a: UserId, b: UserId) -> Pair:
    """Order two distinct ids so that the smaller comes first."""
    if a == b:
        raise SelfBeaconError(f"device {a!r} cannot encounter itself")
    return (a, b) if a < b else (b, a)


def project_local(p: GeoPoint, origin: GeoPoint) -> tuple[float, float]:
    """Equirectangular projection of ``p`` to meters east/north of ``origin``."""
    x = (p.lon - origin.lon) * math.cos(math.radians(origin.lat)) * M_PER_DEG_LON_EQUATOR
    y = (p.lat - origin.lat) * M_PER_DEG_LAT
    return x, y


def unproject_local(x: float, y: float, origin: GeoPoint) -> GeoPoint:
    lon = origin.lon + x / (math.cos(math.radians(origin.lat)) * M_PER_DEG_LON_EQUATOR)
    lat = origin.lat + y / M_PER_DEG_LAT
    return GeoPoint(lat, lon)


def project_arrays(lat, lon, origin: GeoPoint) -> np.ndarray:
    """Vectorised :func:`project_local`; returns an ``(n, 2)`` array of meters."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    xy = np.empty((lat.shape[0], 2))
    xy[:, 0] = (lon - origin.lon) * (math.cos(math.radians(origin.lat)) * M_PER_DEG_LON_EQUATOR)
    xy[:, 1] = (lat - origin.lat) * M_PER_DEG_LAT
    return xy


def haversine_m(p: GeoPoint, q: GeoPoint) -> float:
    phi1, phi2 = math.radians(p.lat), math.radians(q.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(q.lon - p.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, h)))


def manhattan_m(p: GeoPoint, q: GeoPoint, origin: GeoPoint | None = None) -> float:
    """Manhattan distance in meters in a local projection (default origin ``p``)."""
    origin = p if origin is None else origin
    px, py = project_local(p, origin)
    qx, qy = project_local(q, origin)
    return abs(px - qx) + abs(py - qy)


def centroid(points) -> GeoPoint:
    points = list(points)
    return GeoPoint(math.fsum(p.lat for p in points) / len(points),
                    math.fsum(p.lon for p in points) / len(points))
