"""Proximity encounters, crowding hotspots and exposure tracing from beacon streams."""

from proxtrace.core_types import (
    BeaconRecord,
    EngineConfig,
    GeoPoint,
    canonical_pair,
    project_local,
    unproject_local,
)
from proxtrace.crowding import (
    GridDBSCAN,
    Hotspot,
    LabelMap,
    ManhattanDBSCAN,
    dbscan,
    dbscan_parallel,
    score_hotspots,
)
from proxtrace.encounter import (
    Encounter,
    EncounterDetector,
    detect_encounters,
    detect_encounters_parallel,
)
from proxtrace.exceptions import (
    ChunkFormatError,
    EmptyInputError,
    InvalidQueryError,
    OracleValidityError,
    SelfBeaconError,
)
from proxtrace.ingest import Chunk, Window, parse_chunk, window_records
from proxtrace.notify import (
    DailySummary,
    PopulationMetrics,
    daily_summary,
    dedup_daily,
    population_metrics,
    sojourn_in_hotspots,
)
from proxtrace.tracing import (
    EncounterGraph,
    ExposureResult,
    HealthReport,
    build_graph,
    cumulative_contact_alert,
    trace,
)

__version__ = "0.1.0"

__all__ = [
    "BeaconRecord",
    "Chunk",
    "ChunkFormatError",
    "DailySummary",
    "EmptyInputError",
    "Encounter",
    "EncounterDetector",
    "EncounterGraph",
    "EngineConfig",
    "ExposureResult",
    "GeoPoint",
    "GridDBSCAN",
    "HealthReport",
    "Hotspot",
    "InvalidQueryError",
    "LabelMap",
    "ManhattanDBSCAN",
    "OracleValidityError",
    "PopulationMetrics",
    "SelfBeaconError",
    "Window",
    "build_graph",
    "canonical_pair",
    "cumulative_contact_alert",
    "daily_summary",
    "dbscan",
    "dbscan_parallel",
    "dedup_daily",
    "detect_encounters",
    "detect_encounters_parallel",
    "parse_chunk",
    "population_metrics",
    "project_local",
    "score_hotspots",
    "sojourn_in_hotspots",
    "trace",
    "unproject_local",
    "window_records",
]
