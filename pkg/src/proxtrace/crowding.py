"""Crowding hotspots: Manhattan-metric DBSCAN over encounter locations.

Two clustering paths produce identical labels:

* :func:`dbscan` runs the classic seed-and-expand procedure over all points.
* :func:`dbscan_parallel` splits the plane into square cells, clusters every
  cell (plus a halo of neighbouring points) independently, then stitches the
  cell-local clusters together with a union-find pass.

Points are always processed in a canonical order (ascending latitude,
longitude, pair, window), so the cluster that claims a border point reachable
from several clusters is fixed: it is the cluster discovered first, i.e. the
one whose lowest-ordered core point comes first.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, ClusterMixin

from proxtrace.core_types import EngineConfig, GeoPoint, centroid, project_arrays, project_local
from proxtrace.encounter import Encounter
from proxtrace.exceptions import EmptyInputError
from proxtrace.ingest import format_float
from proxtrace.parallel import map_tasks, worker_pool
from proxtrace.validation import check_config, check_positive_int, check_xy

NOISE = -1
_UNVISITED = -2
# slack on the KD-tree search radius; candidates are re-checked exactly
_SEARCH_SLACK = 1e-9
AREA_UNIT_M2 = 10.0


# --------------------------------------------------------------------------
# neighbourhoods


def manhattan_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Manhattan distance between two ``(n, 2)`` arrays."""
    return np.abs(a[:, 0] - b[:, 0]) + np.abs(a[:, 1] - b[:, 1])


def radius_pairs(xy: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """All index pairs ``i < j`` with Manhattan distance ``<= eps``."""
    if len(xy) < 2:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty
    tree = cKDTree(xy)
    pairs = tree.query_pairs(eps * (1 + _SEARCH_SLACK) + _SEARCH_SLACK, p=1,
                             output_type="ndarray")
    if len(pairs) == 0:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty
    i, j = pairs[:, 0], pairs[:, 1]
    keep = manhattan_rows(xy[i], xy[j]) <= eps
    return i[keep].astype(np.intp), j[keep].astype(np.intp)


def _adjacency(n: int, i: np.ndarray, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CSR adjacency (indptr, indices) with each row sorted ascending."""
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    order = np.lexsort((dst, src))
    indptr = np.zeros(n + 1, dtype=np.intp)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst[order]


def _expand(n: int, indptr: np.ndarray, indices: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Classic DBSCAN expansion in index order given precomputed core flags."""
    labels = [_UNVISITED] * n
    ptr = indptr.tolist()
    nbr = indices.tolist()
    is_core = core.tolist()
    cluster = 0
    for p in range(n):
        if labels[p] != _UNVISITED:
            continue
        if not is_core[p]:
            labels[p] = NOISE
            continue
        labels[p] = cluster
        queue = deque(nbr[ptr[p]:ptr[p + 1]])
        while queue:
            q = queue.popleft()
            if labels[q] == NOISE:
                labels[q] = cluster
                continue
            if labels[q] != _UNVISITED:
                continue
            labels[q] = cluster
            if is_core[q]:
                queue.extend(nbr[ptr[q]:ptr[q + 1]])
        cluster += 1
    return np.asarray(labels, dtype=np.intp)


def dbscan_xy(xy: np.ndarray, eps: float, min_pts: int) -> tuple[np.ndarray, np.ndarray]:
    """Serial DBSCAN on planar points processed in row order.

    A point's neighbourhood includes the point itself. Returns
    ``(labels, core_mask)`` with ``-1`` for noise and cluster ids numbered in
    order of discovery.
    """
    n = len(xy)
    i, j = radius_pairs(xy, eps)
    indptr, indices = _adjacency(n, i, j)
    core = (np.diff(indptr) + 1) >= min_pts
    return _expand(n, indptr, indices, core), core


# --------------------------------------------------------------------------
# grid-partitioned variant


class UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller key wins so the structure is order-independent
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


@dataclass
class _CellTask:
    cell: tuple[int, int]
    idx: np.ndarray       # global indices of the 2*eps box, ascending
    xy: np.ndarray
    inner: np.ndarray     # inside the eps box: core flag is exact there
    owned: np.ndarray
    eps: float
    min_pts: int
    merge_rule: str


@dataclass
class _CellResult:
    cell: tuple[int, int]
    owned_idx: np.ndarray
    owned_core: np.ndarray
    comp_idx: np.ndarray      # global indices of cores with a local component
    comp_label: np.ndarray
    border_ptr: np.ndarray    # CSR of core neighbours for owned non-core points
    border_idx: np.ndarray
    border_nbrs: np.ndarray
    comp_centroids: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    comp_radii: np.ndarray = field(default_factory=lambda: np.empty(0))


def _cluster_cell(task: _CellTask) -> _CellResult:
    n = len(task.idx)
    i, j = radius_pairs(task.xy, task.eps)
    indptr, indices = _adjacency(n, i, j)
    core = ((np.diff(indptr) + 1) >= task.min_pts) & task.inner
    # components may only grow through points whose core flag is exact
    scope = task.inner if task.merge_rule == "core" else task.owned
    local = _expand(n, indptr, indices, core & scope)
    has_comp = core & scope & (local >= 0)
    comp_idx = task.idx[has_comp]
    comp_label = local[has_comp]

    centroids = np.empty((0, 2))
    radii = np.empty(0)
    if task.merge_rule == "centroid" and len(comp_label):
        k = int(comp_label.max()) + 1
        pts = task.xy[has_comp]
        counts = np.bincount(comp_label, minlength=k)
        centroids = np.column_stack([
            np.bincount(comp_label, weights=pts[:, 0], minlength=k) / counts,
            np.bincount(comp_label, weights=pts[:, 1], minlength=k) / counts,
        ])
        dist = manhattan_rows(pts, centroids[comp_label])
        radii = np.zeros(k)
        np.maximum.at(radii, comp_label, dist)

    border_local = np.flatnonzero(task.owned & ~core)
    ptr = [0]
    nbrs = []
    for p in border_local:
        row = indices[indptr[p]:indptr[p + 1]]
        row = row[core[row]]
        nbrs.append(task.idx[row])
        ptr.append(ptr[-1] + len(row))
    return _CellResult(
        cell=task.cell,
        owned_idx=task.idx[task.owned],
        owned_core=core[task.owned],
        comp_idx=comp_idx,
        comp_label=comp_label,
        border_ptr=np.asarray(ptr, dtype=np.intp),
        border_idx=task.idx[border_local],
        border_nbrs=np.concatenate(nbrs) if nbrs else np.empty(0, dtype=np.intp),
        comp_centroids=centroids,
        comp_radii=radii,
    )


def _grid_tasks(xy: np.ndarray, eps: float, min_pts: int, cell_m: float,
                merge_rule: str) -> list[_CellTask]:
    lo = xy.min(axis=0)
    cells = np.floor((xy - lo) / cell_m).astype(np.int64)
    span = int(cells[:, 1].max()) + 3
    all_idx = np.arange(len(xy))
    codes, points = [], []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            target = cells + np.array([dx, dy])
            if dx == 0 and dy == 0:
                hit = all_idx
            else:
                box_lo = lo + target * cell_m
                # L-infinity gap to the target cell's box, 0 when inside
                gap = np.maximum(np.maximum(box_lo - xy, xy - (box_lo + cell_m)), 0).max(axis=1)
                hit = np.flatnonzero(gap <= 2 * eps)
            codes.append((target[hit, 0] + 1) * span + (target[hit, 1] + 1))
            points.append(hit)
    codes = np.concatenate(codes)
    points = np.concatenate(points)
    order = np.lexsort((points, codes))
    codes, points = codes[order], points[order]
    keys, starts = np.unique(codes, return_index=True)
    bounds = list(starts[1:]) + [len(codes)]

    tasks = []
    for code, a, b in zip(keys.tolist(), starts.tolist(), bounds):
        key = (code // span - 1, code % span - 1)
        idx = points[a:b]
        owned = (cells[idx, 0] == key[0]) & (cells[idx, 1] == key[1])
        if not owned.any():
            continue
        sub = xy[idx]
        box_lo = lo + np.array(key) * cell_m
        gap = np.maximum(np.maximum(box_lo - sub, sub - (box_lo + cell_m)), 0).max(axis=1)
        inner = owned | (gap <= eps)
        tasks.append(_CellTask(key, idx, sub, inner, owned, eps, min_pts, merge_rule))
    return tasks


def _merge_cells(n: int, results: Sequence[_CellResult], eps: float,
                 merge_rule: str) -> tuple[np.ndarray, np.ndarray]:
    core = np.zeros(n, dtype=bool)
    for r in results:
        core[r.owned_idx] = r.owned_core

    uf = UnionFind()
    owner_key: dict[int, tuple] = {}
    for r in results:
        for g, lab in zip(r.comp_idx.tolist(), r.comp_label.tolist()):
            key = (r.cell, lab)
            uf.add(key)
            if g in owner_key:
                uf.union(owner_key[g], key)
            else:
                owner_key[g] = key

    if merge_rule == "centroid":
        by_cell = {r.cell: r for r in results}
        for r in results:
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    other = by_cell.get((r.cell[0] + dx, r.cell[1] + dy))
                    if other is None or other.cell <= r.cell:
                        continue
                    for a, (ca, ra) in enumerate(zip(r.comp_centroids, r.comp_radii)):
                        for b, (cb, rb) in enumerate(zip(other.comp_centroids, other.comp_radii)):
                            if abs(ca[0] - cb[0]) + abs(ca[1] - cb[1]) <= ra + rb + eps:
                                uf.union((r.cell, a), (other.cell, b))

    # clusters are numbered by their lowest core index, i.e. discovery order
    core_idx = np.flatnonzero(core)
    roots = [uf.find(owner_key[g]) for g in core_idx.tolist()]
    first_seen: dict = {}
    for g, root in zip(core_idx.tolist(), roots):
        first_seen.setdefault(root, g)
    rank = {root: k for k, root in enumerate(sorted(first_seen, key=first_seen.get))}
    labels = np.full(n, NOISE, dtype=np.intp)
    labels[core_idx] = [rank[root] for root in roots]

    for r in results:
        if len(r.border_idx) == 0 or len(r.border_nbrs) == 0:
            continue
        counts = np.diff(r.border_ptr)
        has = counts > 0
        nbr_labels = labels[r.border_nbrs]
        starts = r.border_ptr[:-1][has]
        labels[r.border_idx[has]] = np.minimum.reduceat(nbr_labels, starts)
    return labels, core


def dbscan_xy_parallel(xy: np.ndarray, eps: float, min_pts: int, cell_m: float,
                       workers: int = 1, executor=None,
                       merge_rule: str = "core") -> tuple[np.ndarray, np.ndarray]:
    """Grid-partitioned DBSCAN; same contract as :func:`dbscan_xy`.

    Each cell's task holds every point within ``2 * eps`` of the cell so
    that core flags of points up to ``eps`` outside it are exact. Cell-local
    clusters sharing a core point are united; with ``merge_rule="core"``
    the result equals the serial one exactly.
    """
    if cell_m <= 2 * eps:
        raise ValueError("grid cell side must exceed 2 * eps")
    n = len(xy)
    if n == 0:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=bool)
    tasks = _grid_tasks(xy, eps, min_pts, cell_m, merge_rule)
    if executor is None and workers > 1 and len(tasks) > 1:
        with worker_pool(min(workers, len(tasks))) as pool:
            results = map_tasks(_cluster_cell, tasks, pool)
    else:
        results = map_tasks(_cluster_cell, tasks, executor)
    return _merge_cells(n, results, eps, merge_rule)


# --------------------------------------------------------------------------
# encounter-level API


@dataclass(frozen=True)
class Hotspot:
    cluster_id: int
    members: tuple[Encounter, ...]
    centroid: GeoPoint
    radius_m: float
    unique_encounters: int
    area_10m2: int
    density: float
    is_hot: bool


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Cluster label of every encounter of one clustering batch.

    ``encounters`` are stored in canonical processing order and ``xy`` holds
    their projected coordinates (meters) about ``origin``.
    """

    encounters: tuple[Encounter, ...]
    labels: tuple[int, ...]
    core: tuple[bool, ...]
    origin: GeoPoint
    xy: np.ndarray

    @property
    def assignment(self) -> dict[Encounter, int]:
        return dict(zip(self.encounters, self.labels))

    @property
    def n_clusters(self) -> int:
        return max(self.labels, default=NOISE) + 1

    def members(self, cluster_id: int) -> list[int]:
        return [k for k, lab in enumerate(self.labels) if lab == cluster_id]


def processing_key(e: Encounter):
    return (e.mean_location.lat, e.mean_location.lon, e.pair, e.window_start,
            e.first_in_range, e.last_in_range)


def _prepare(points: Iterable[Encounter]) -> tuple[tuple[Encounter, ...], GeoPoint, np.ndarray]:
    ordered = tuple(sorted(points, key=processing_key))
    if not ordered:
        raise EmptyInputError("cannot cluster an empty set of encounters")
    origin = centroid(e.mean_location for e in ordered)
    xy = project_arrays([e.mean_location.lat for e in ordered],
                        [e.mean_location.lon for e in ordered], origin)
    return ordered, origin, xy


def _label_map(ordered, origin, xy, labels, core) -> LabelMap:
    return LabelMap(ordered, tuple(int(v) for v in labels), tuple(bool(v) for v in core),
                    origin, xy)


def dbscan(points: Sequence[Encounter],
           cfg: EngineConfig | None = None) -> tuple[LabelMap, list[Hotspot]]:
    """Cluster encounter mean locations and score the resulting hotspots."""
    cfg = check_config(cfg)
    ordered, origin, xy = _prepare(points)
    labels, core = dbscan_xy(xy, cfg.epsilon_m, cfg.min_pts)
    lm = _label_map(ordered, origin, xy, labels, core)
    return lm, score_hotspots(lm, cfg)


def dbscan_parallel(points: Sequence[Encounter], cfg: EngineConfig | None = None,
                    workers: int = 1, executor=None) -> tuple[LabelMap, list[Hotspot]]:
    """Grid-partitioned counterpart of :func:`dbscan` with the same output."""
    cfg = check_config(cfg)
    workers = check_positive_int(workers, "workers")
    ordered, origin, xy = _prepare(points)
    labels, core = dbscan_xy_parallel(xy, cfg.epsilon_m, cfg.min_pts, cfg.grid_cell_m,
                                      workers, executor, cfg.merge_rule)
    lm = _label_map(ordered, origin, xy, labels, core)
    return lm, score_hotspots(lm, cfg)


def score_hotspots(labels: LabelMap, cfg: EngineConfig | None = None) -> list[Hotspot]:
    """Density of every cluster in unique encounters per 10 m^2.

    The cluster area is the bounding box of its members in projected meters,
    never less than one 10 m^2 unit. Sorted by density, densest first.
    """
    cfg = check_config(cfg)
    by_cluster: dict[int, list[int]] = {}
    for k, lab in enumerate(labels.labels):
        if lab != NOISE:
            by_cluster.setdefault(lab, []).append(k)
    hotspots = []
    for cid, rows in sorted(by_cluster.items()):
        members = tuple(labels.encounters[k] for k in rows)
        pts = labels.xy[rows]
        center = centroid(e.mean_location for e in members)
        cx, cy = project_local(center, labels.origin)
        radius = float(np.max(np.abs(pts[:, 0] - cx) + np.abs(pts[:, 1] - cy)))
        width, height = np.ptp(pts, axis=0)
        area = max(float(width * height), AREA_UNIT_M2)
        # tolerate projection round-off on exact multiples of 10 m^2
        units = max(1, math.ceil(area / AREA_UNIT_M2 - 1e-9))
        unique = len({e.pair for e in members})
        density = unique / units
        hotspots.append(Hotspot(cid, members, center, radius, unique, units, density,
                                density >= cfg.crowding_density_threshold))
    hotspots.sort(key=lambda h: (-h.density, h.cluster_id))
    return hotspots


# --------------------------------------------------------------------------
# estimators


class ManhattanDBSCAN(ClusterMixin, BaseEstimator):
    """DBSCAN with the Manhattan metric over planar coordinates in meters.

    Rows are processed in the order given, which fixes cluster numbering and
    the owner of ambiguous border points.

    Parameters
    ----------
    eps : float, default=50.0
        Neighbourhood radius.
    min_samples : int, default=5
        Neighbourhood size (including the point) that makes a core point.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Cluster index per row, ``-1`` for noise.
    core_sample_indices_ : ndarray
        Indices of core samples.
    """

    def __init__(self, eps=50.0, min_samples=5):
        self.eps = eps
        self.min_samples = min_samples

    def _check_params(self):
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        check_positive_int(self.min_samples, "min_samples")

    def fit(self, X, y=None):
        self._check_params()
        X = check_xy(X)
        labels, core = dbscan_xy(X, float(self.eps), int(self.min_samples))
        self._store(labels, core)
        return self

    def _store(self, labels, core):
        self.labels_ = labels
        self.core_sample_indices_ = np.flatnonzero(core)
        self.n_clusters_ = int(labels.max()) + 1 if len(labels) else 0


class GridDBSCAN(ManhattanDBSCAN):
    """Grid-partitioned :class:`ManhattanDBSCAN` run on a process pool.

    Parameters
    ----------
    cell_size : float, default=500.0
        Side of the square grid cells; must exceed ``2 * eps``.
    n_jobs : int, default=1
        Worker processes.
    merge_rule : {"core", "centroid"}, default="core"
        ``"core"`` unites cell clusters that share a core point and matches
        :class:`ManhattanDBSCAN` exactly. ``"centroid"`` unites clusters of
        adjacent cells whose centroids are within ``r1 + r2 + eps``.
    """

    def __init__(self, eps=50.0, min_samples=5, cell_size=500.0, n_jobs=1, merge_rule="core"):
        super().__init__(eps=eps, min_samples=min_samples)
        self.cell_size = cell_size
        self.n_jobs = n_jobs
        self.merge_rule = merge_rule

    def fit(self, X, y=None):
        self._check_params()
        if self.merge_rule not in ("core", "centroid"):
            raise ValueError(f"unknown merge_rule {self.merge_rule!r}")
        X = check_xy(X)
        labels, core = dbscan_xy_parallel(X, float(self.eps), int(self.min_samples),
                                          float(self.cell_size),
                                          check_positive_int(self.n_jobs, "n_jobs"),
                                          merge_rule=self.merge_rule)
        self._store(labels, core)
        return self


# --------------------------------------------------------------------------
# exports


def hotspots_to_geojson(hotspots: Iterable[Hotspot]) -> str:
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [h.centroid.lon, h.centroid.lat]},
            "properties": {
                "cluster_id": h.cluster_id,
                "unique_encounters": h.unique_encounters,
                "density": h.density,
                "radius_m": h.radius_m,
                "is_hot": h.is_hot,
            },
        }
        for h in hotspots
    ]
    return json.dumps({"type": "FeatureCollection", "features": features}, indent=1) + "\n"


LABELS_HEADER = ("user_a", "user_b", "window_start_ms", "t1_ms", "mean_lat", "mean_lon",
                 "label", "core")


def labels_to_csv(lm: LabelMap) -> str:
    lines = [",".join(LABELS_HEADER)]
    for e, lab, is_core in zip(lm.encounters, lm.labels, lm.core):
        lines.append(f"{e.user_a},{e.user_b},{e.window_start},{e.first_in_range},"
                     f"{format_float(e.mean_location.lat)},{format_float(e.mean_location.lon)},"
                     f"{lab},{int(is_core)}")
    return "\n".join(lines) + "\n"


def labels_from_csv(text: str, encounters: Sequence[Encounter]) -> LabelMap:
    """Rebuild a :class:`LabelMap` for ``encounters`` from :func:`labels_to_csv` output."""
    ordered, origin, xy = _prepare(encounters)
    rows = {}
    for line in text.splitlines()[1:]:
        if not line:
            continue
        a, b, ws, t1, _lat, _lon, lab, is_core = line.split(",")
        rows[(a, b, int(ws), int(t1))] = (int(lab), is_core == "1")
    labels, core = [], []
    for e in ordered:
        lab, is_core = rows[(e.user_a, e.user_b, e.window_start, e.first_in_range)]
        labels.append(lab)
        core.append(is_core)
    return LabelMap(ordered, tuple(labels), tuple(core), origin, xy)
