"""Input validation helpers shared by ingest, the estimators and the CLI."""

from __future__ import annotations

import math
import re

import numpy as np

from proxtrace.core_types import BeaconRecord, EngineConfig
from proxtrace.exceptions import InvalidConfigError

_USER_ID = re.compile(r"^[0-9a-f]{32}$")


def is_user_id(value) -> bool:
    return isinstance(value, str) and _USER_ID.match(value) is not None


def check_user_id(value) -> str:
    if not is_user_id(value):
        raise ValueError(f"not a 32-char lowercase hex user id: {value!r}")
    return value


def is_valid_geo(lat: float, lon: float) -> bool:
    return (math.isfinite(lat) and math.isfinite(lon)
            and -90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0)


def record_problem(rec: BeaconRecord) -> str | None:
    """Return a short reason if ``rec`` violates a record invariant, else None."""
    if not (is_user_id(rec.user_a) and is_user_id(rec.user_b)):
        return "bad user id"
    if rec.user_a == rec.user_b:
        return "self pair"
    if rec.user_a > rec.user_b:
        return "pair not canonical"
    if not isinstance(rec.t, int) or rec.t < 0:
        return "bad timestamp"
    if not math.isfinite(rec.distance_m) or rec.distance_m < 0:
        return "bad distance"
    if not is_valid_geo(rec.location.lat, rec.location.lon):
        return "bad location"
    return None


def check_config(cfg) -> EngineConfig:
    if cfg is None:
        return EngineConfig()
    if not isinstance(cfg, EngineConfig):
        raise InvalidConfigError(f"expected EngineConfig, got {type(cfg).__name__}")
    return cfg


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
    return int(value)


def check_xy(X) -> np.ndarray:
    """Coerce ``X`` to a finite float ``(n, 2)`` array of projected meters."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of planar coordinates, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("coordinates must be finite")
    return X
