"""Synthetic agents, beacon streams and the ground truth behind them.

Agents move in a local plane (meters) around ``origin``; every beacon period
each pair closer than the radio range exchanges a beacon whose reported
distance is the true distance plus optional Gaussian noise. The ground truth
keeps the noise-free distance profile of every pair so that the expected
encounter set can be derived without going through the detector.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from proxtrace.core_types import (
    BeaconRecord,
    EngineConfig,
    M_PER_DEG_LAT,
    M_PER_DEG_LON_EQUATOR,
    GeoPoint,
    Pair,
    UserId,
    unproject_local,
)
from proxtrace.exceptions import OracleValidityError
from proxtrace.validation import check_config

MOBILITY = ("stationary", "random_walk", "gathering")
# 2020-06-01T00:00:00Z
DEFAULT_START_MS = 1_590_969_600_000


@dataclass(frozen=True)
class ScenarioConfig:
    n_agents: int = 50
    duration_s: float = 4 * 3600
    area_m: float = 2000.0
    mobility: str = "gathering"
    gathering_spots: int = 3
    distance_noise_sd_m: float = 0.0
    beacon_drop_prob: float = 0.0
    seed: int = 0
    start_ms: int = DEFAULT_START_MS
    origin: GeoPoint = GeoPoint(35.1495, -90.0490)
    beacon_period_s: float = 20
    radio_range_m: float = 24.0
    walk_speed_mps: float = 1.4
    max_speed_mps: float = 2.0
    dwell_s: tuple[float, float] = (1500.0, 2700.0)
    spot_jitter_m: float = 3.0

    def __post_init__(self):
        if self.n_agents < 0 or int(self.n_agents) != self.n_agents:
            raise ValueError("n_agents must be a non-negative integer")
        if self.duration_s < 0 or self.area_m <= 0 or self.beacon_period_s <= 0:
            raise ValueError("duration_s >= 0, area_m > 0 and beacon_period_s > 0 required")
        if self.mobility not in MOBILITY:
            raise ValueError(f"mobility must be one of {MOBILITY}")
        if self.mobility == "gathering" and self.gathering_spots < 1:
            raise ValueError("gathering mobility needs at least one spot")
        if self.distance_noise_sd_m < 0:
            raise ValueError("distance_noise_sd_m must be >= 0")
        if not 0 <= self.beacon_drop_prob < 1:
            raise ValueError("beacon_drop_prob must be in [0, 1)")
        if self.walk_speed_mps > self.max_speed_mps:
            raise ValueError("walk speed exceeds max speed")

    @property
    def noise_free(self) -> bool:
        return self.distance_noise_sd_m == 0 and self.beacon_drop_prob == 0

    @property
    def period_ms(self) -> int:
        return int(round(self.beacon_period_s * 1000))


@dataclass(frozen=True)
class Agent:
    id: UserId
    trajectory: tuple[tuple[int, GeoPoint], ...]


@dataclass
class GroundTruth:
    """Noise-free pair distance profiles and gathering spots of one scenario."""

    scenario: ScenarioConfig
    agent_ids: tuple[UserId, ...]
    times: np.ndarray                   # ms, shape (T,)
    positions: np.ndarray               # meters, shape (T, N, 2)
    profiles: dict[Pair, list[tuple[int, float]]] = field(default_factory=dict)
    gathering_locations: tuple[GeoPoint, ...] = ()

    @property
    def noise_free(self) -> bool:
        return self.scenario.noise_free

    def agents(self) -> list[Agent]:
        origin = self.scenario.origin
        out = []
        for k, uid in enumerate(self.agent_ids):
            traj = tuple((int(t), unproject_local(float(x), float(y), origin))
                         for t, (x, y) in zip(self.times, self.positions[:, k]))
            out.append(Agent(uid, traj))
        return out

    def episodes(self, delta_m: float) -> list[tuple[Pair, int, int]]:
        """Maximal runs of consecutive samples with true distance ``<= delta_m``."""
        step = self.scenario.period_ms
        out = []
        for pair in sorted(self.profiles):
            start = prev = None
            for t, d in self.profiles[pair]:
                if d > delta_m:
                    continue
                if prev is not None and t - prev == step:
                    prev = t
                    continue
                if start is not None:
                    out.append((pair, start, prev))
                start = prev = t
            if start is not None:
                out.append((pair, start, prev))
        return out

    def to_json(self) -> str:
        sc = asdict(self.scenario)
        sc["origin"] = [self.scenario.origin.lat, self.scenario.origin.lon]
        return json.dumps({
            "scenario": sc,
            "agents": list(self.agent_ids),
            "gathering_locations": [[p.lat, p.lon] for p in self.gathering_locations],
            "profiles": [
                {"pair": list(pair), "samples": [[t, d] for t, d in samples]}
                for pair, samples in sorted(self.profiles.items())
            ],
        }, indent=1) + "\n"


def _agent_ids(rng: np.random.Generator, n: int) -> list[UserId]:
    ids: list[str] = []
    while len(ids) < n:
        uid = rng.bytes(16).hex()
        if uid not in ids:
            ids.append(uid)
    return ids


def _spread_points(rng, k: int, area: float, min_gap: float) -> np.ndarray:
    margin = min(area / 4, 100.0)
    pts: list[np.ndarray] = []
    for _ in range(k):
        for _attempt in range(1000):
            p = rng.uniform(margin, area - margin, 2)
            if all(np.abs(p - q).sum() >= min_gap for q in pts):
                break
        pts.append(p)
    return np.array(pts).reshape(k, 2)


def _trajectories(sc: ScenarioConfig, rng, times_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, T = sc.n_agents, len(times_s)
    home = rng.uniform(0, sc.area_m, (n, 2))
    if sc.mobility == "stationary":
        return np.broadcast_to(home, (T, n, 2)).copy(), np.empty((0, 2))

    if sc.mobility == "random_walk":
        step_max = sc.walk_speed_mps * sc.beacon_period_s
        pos = np.empty((T, n, 2))
        if T:
            pos[0] = home
        for k in range(1, T):
            heading = rng.uniform(0, 2 * math.pi, n)
            length = rng.uniform(0, step_max, n)
            step = np.column_stack([np.cos(heading), np.sin(heading)]) * length[:, None]
            nxt = pos[k - 1] + step
            # reflect at the square's edges; reflection never lengthens a step
            nxt = np.abs(nxt)
            nxt = sc.area_m - np.abs(sc.area_m - nxt)
            pos[k] = nxt
        return pos, np.empty((0, 2))

    spots = _spread_points(rng, sc.gathering_spots, sc.area_m, 200.0)
    assigned = np.arange(n) % sc.gathering_spots
    r = sc.spot_jitter_m * np.sqrt(rng.uniform(0, 1, n))
    theta = rng.uniform(0, 2 * math.pi, n)
    target = spots[assigned] + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    depart = rng.uniform(0, 0.25 * sc.duration_s, n)
    dwell = rng.uniform(sc.dwell_s[0], sc.dwell_s[1], n)
    travel = np.linalg.norm(target - home, axis=1) / sc.walk_speed_mps
    arrive = depart + travel
    leave = arrive + dwell
    back = leave + travel

    t = times_s[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        go = np.where(travel > 0, (t - depart) / travel, 1.0)
        ret = np.where(travel > 0, (t - leave) / travel, 1.0)
    frac = np.select(
        [t < depart, t < arrive, t < leave, t < back],
        [0.0, go, 1.0, 1.0 - ret],
        0.0,
    )
    frac = np.clip(frac, 0.0, 1.0)
    pos = home[None] + frac[..., None] * (target - home)[None]
    return pos, spots


def generate(sc: ScenarioConfig) -> tuple[list[BeaconRecord], GroundTruth]:
    """Simulate ``sc`` and return its beacon records and ground truth.

    The GPS fix attached to a beacon is the position of the pair's first
    (canonically smaller) user.
    """
    rng = np.random.default_rng(sc.seed)
    ids = _agent_ids(rng, sc.n_agents)
    n_samples = int(math.floor(sc.duration_s / sc.beacon_period_s)) + 1
    times_s = np.arange(n_samples) * sc.beacon_period_s
    times_ms = sc.start_ms + np.arange(n_samples, dtype=np.int64) * sc.period_ms
    pos, spots = _trajectories(sc, rng, times_s)

    origin = sc.origin
    cos0 = math.cos(math.radians(origin.lat))
    lat = origin.lat + pos[..., 1] / M_PER_DEG_LAT
    lon = origin.lon + pos[..., 0] / (cos0 * M_PER_DEG_LON_EQUATOR)

    order = sorted(range(sc.n_agents), key=lambda k: ids[k])
    iu, ju = np.triu_indices(sc.n_agents, k=1)
    # canonical orientation: first index holds the smaller id
    rank = np.empty(sc.n_agents, dtype=int)
    rank[order] = np.arange(sc.n_agents)
    a_idx = np.where(rank[iu] < rank[ju], iu, ju)
    b_idx = np.where(rank[iu] < rank[ju], ju, iu)
    pair_order = np.lexsort((rank[b_idx], rank[a_idx]))
    a_idx, b_idx = a_idx[pair_order], b_idx[pair_order]

    records: list[BeaconRecord] = []
    profiles: dict[Pair, list[tuple[int, float]]] = defaultdict(list)
    for k in range(n_samples):
        diff = pos[k, a_idx] - pos[k, b_idx]
        dist = np.hypot(diff[:, 0], diff[:, 1])
        near = np.flatnonzero(dist <= sc.radio_range_m)
        if len(near) == 0:
            continue
        noise = (rng.normal(0.0, sc.distance_noise_sd_m, len(near))
                 if sc.distance_noise_sd_m > 0 else np.zeros(len(near)))
        keep = (rng.uniform(0, 1, len(near)) >= sc.beacon_drop_prob
                if sc.beacon_drop_prob > 0 else np.ones(len(near), dtype=bool))
        t = int(times_ms[k])
        for m, p in enumerate(near.tolist()):
            a, b = int(a_idx[p]), int(b_idx[p])
            d = float(dist[p])
            pair = (ids[a], ids[b])
            profiles[pair].append((t, d))
            if keep[m]:
                reported = max(0.0, d + float(noise[m]))
                records.append(BeaconRecord(ids[a], ids[b], t, reported,
                                            GeoPoint(float(lat[k, a]), float(lon[k, a]))))

    gathering = tuple(unproject_local(float(x), float(y), origin) for x, y in spots)
    gt = GroundTruth(sc, tuple(ids), times_ms, pos, dict(profiles), gathering)
    return records, gt


def expected_encounters(gt: GroundTruth, cfg: EngineConfig | None = None) -> list[tuple[Pair, int]]:
    """Encounters implied by the ground-truth episodes of a noise-free scenario.

    Works on in-range episodes clipped to windows and counts beacons
    arithmetically from the sampling grid, independent of record handling.
    """
    cfg = check_config(cfg)
    if not gt.noise_free:
        raise OracleValidityError("expected_encounters needs a noise- and drop-free scenario")
    if cfg.delta_m > gt.scenario.radio_range_m:
        raise OracleValidityError("delta_m exceeds the simulated radio range")
    step = gt.scenario.period_ms
    per_window: dict[tuple[Pair, int], list[int]] = {}
    for pair, ws, first, last in window_episodes(gt, cfg):
        acc = per_window.setdefault((pair, ws), [0, first, last])
        acc[0] += (last - first) // step + 1
        acc[1] = min(acc[1], first)
        acc[2] = max(acc[2], last)
    return sorted(key for key, (count, first, last) in per_window.items()
                  if count >= cfg.mu and last - first >= cfg.tau_ms)


def window_episodes(gt: GroundTruth, cfg: EngineConfig | None = None) -> list[tuple[Pair, int, int, int]]:
    """True in-range episodes clipped to computation windows.

    Returns ``(pair, window_start, first_ms, last_ms)`` per clipped run.
    """
    cfg = check_config(cfg)
    width = cfg.window_ms
    step = gt.scenario.period_ms
    out = []
    for pair, start, end in gt.episodes(cfg.delta_m):
        w = start // width
        while w * width <= end:
            lo = max(start, w * width)
            hi = min(end, (w + 1) * width - 1)
            first = start + -(-(lo - start) // step) * step
            last = start + ((hi - start) // step) * step
            if first <= last:
                out.append((pair, w * width, first, last))
            w += 1
    return out


def episode_recall(encounters: Sequence, gt: GroundTruth, cfg: EngineConfig | None = None,
                   min_length_s: float | None = None) -> tuple[int, int]:
    """``(recalled, total)`` over window-clipped true episodes of a minimum length.

    Episodes are clipped to computation windows first, because a run split
    by a window boundary is judged separately in each window. A clipped
    episode at least ``min_length_s`` long (default ``tau_s + 60``) is
    recalled when an encounter of its pair exists in that window.
    """
    cfg = check_config(cfg)
    if min_length_s is None:
        min_length_s = cfg.tau_s + 60
    found = {(e.pair, e.window_start) for e in encounters}
    total = hit = 0
    for pair, ws, first, last in window_episodes(gt, cfg):
        if last - first < min_length_s * 1000:
            continue
        total += 1
        hit += (pair, ws) in found
    return hit, total
