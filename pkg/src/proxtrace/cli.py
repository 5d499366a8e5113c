"""Command-line entry point: ``proxtrace <subcommand> ...``.

Stages read and write plain artifacts in an output directory, so each one can
be run on its own against the previous stage's files::

    encounters_<window_start_ms>.csv   per computation window
    hotspots_<date>.geojson            per UTC day
    labels_<date>.csv                  per UTC day (cluster label per encounter)
    summaries_<date>.csv               per UTC day
    metrics_<date>.json                per UTC day
    exposure_<date>.csv                when a health report is given
    run.json                           stages and diagnostics of ``run``
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from proxtrace.bench import format_table, run_bench
from proxtrace.core_types import BeaconRecord, EngineConfig
from proxtrace.crowding import (
    LabelMap,
    dbscan,
    dbscan_parallel,
    hotspots_to_geojson,
    labels_from_csv,
    labels_to_csv,
    score_hotspots,
)
from proxtrace.encounter import (
    Encounter,
    detect_encounters_parallel,
    encounters_from_csv,
    encounters_to_csv,
)
from proxtrace.exceptions import ChunkFormatError, InvalidConfigError
from proxtrace.ingest import FORMATS, Chunk, dumps, merge_chunks, read_chunk_file, window_records
from proxtrace.notify import (
    daily_summary,
    dedup_daily,
    population_metrics,
    sojourn_in_hotspots,
    summaries_to_csv,
    utc_date,
)
from proxtrace.parallel import worker_pool
from proxtrace.sim import MOBILITY, ScenarioConfig, generate
from proxtrace.tracing import HealthReport, build_graph, exposure_to_csv, trace

logger = logging.getLogger("proxtrace")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING_INPUT = 2
EXIT_BAD_CONFIG = 3
EXIT_INTERNAL = 4

STAGES = ("ingest", "encounters", "crowding", "tracing", "notify")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class PipelineRun:
    config: EngineConfig
    inputs: list[str]
    outputs_dir: Path
    stages_completed: list[str] = field(default_factory=list)
    diagnostics: dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def finish(self, stage: str):
        if stage in self.stages_completed:
            return
        expected = STAGES[len(self.stages_completed)]
        if stage != expected:
            raise AssertionError(f"stage {stage!r} ran before {expected!r}")
        self.stages_completed.append(stage)

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config.as_dict(),
            "inputs": [Path(p).name for p in self.inputs],
            "stages_completed": self.stages_completed,
            "diagnostics": dict(sorted(self.diagnostics.items())),
        }, indent=1, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# config


def read_config_file(path: str) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_BAD_CONFIG) from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value", EXIT_BAD_CONFIG)
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(args) -> EngineConfig:
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}", EXIT_BAD_CONFIG)
        key, value = item.split("=", 1)
        values[key.strip()] = value
    try:
        return EngineConfig.from_mapping(values)
    except InvalidConfigError as exc:
        raise CliError(f"invalid config: {exc}", EXIT_BAD_CONFIG) from None


# --------------------------------------------------------------------------
# stage helpers


def _read_inputs(paths: Sequence[str], fmt: str) -> Chunk:
    chunks = []
    for p in paths:
        if not Path(p).is_file():
            raise CliError(f"input not found: {p}", EXIT_MISSING_INPUT)
        try:
            chunks.append(read_chunk_file(p, fmt))
        except ChunkFormatError as exc:
            raise CliError(f"{p}: {exc}", EXIT_MISSING_INPUT) from None
    return merge_chunks(chunks)


def _require_dir(path: str) -> Path:
    d = Path(path)
    if not d.is_dir():
        raise CliError(f"artifact directory not found: {path}", EXIT_MISSING_INPUT)
    return d


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def stage_encounters(records, cfg, out: Path, run: PipelineRun, executor=None,
                     shards: int = 1) -> dict[int, list[Encounter]]:
    by_window = {}
    for w in window_records(records, cfg.window_s):
        found = detect_encounters_parallel(w, cfg, shards, executor)
        by_window[w.start] = found
        _write(out / f"encounters_{w.start}.csv", encounters_to_csv(found))
        run.diagnostics["windows"] += 1
        run.diagnostics["encounters"] += len(found)
    run.finish("encounters")
    return by_window


def _group_days(by_window: dict[int, list[Encounter]]) -> dict[dt.date, list[Encounter]]:
    days: dict[dt.date, list[Encounter]] = {}
    for ws in sorted(by_window):
        days.setdefault(utc_date(ws), []).extend(by_window[ws])
    return days


def stage_crowding(days, cfg, out: Path, run: PipelineRun, workers: int = 1,
                   executor=None) -> dict[dt.date, tuple[LabelMap | None, list]]:
    result = {}
    for day, encs in sorted(days.items()):
        if encs:
            if workers > 1:
                lm, hotspots = dbscan_parallel(encs, cfg, workers, executor)
            else:
                lm, hotspots = dbscan(encs, cfg)
            labels_csv = labels_to_csv(lm)
        else:
            lm, hotspots = None, []
            labels_csv = labels_to_csv(LabelMap((), (), (), None, None))
        result[day] = (lm, hotspots)
        _write(out / f"hotspots_{day.isoformat()}.geojson", hotspots_to_geojson(hotspots))
        _write(out / f"labels_{day.isoformat()}.csv", labels_csv)
        run.diagnostics["clusters"] += len(hotspots)
        run.diagnostics["hot_clusters"] += sum(h.is_hot for h in hotspots)
    run.finish("crowding")
    return result


def stage_tracing(all_encounters, report: HealthReport | None, cfg, out: Path,
                  run: PipelineRun, max_hops: int = 1):
    if report is not None:
        result = trace(build_graph(all_encounters), report, cfg, max_hops)
        _write(out / f"exposure_{utc_date(report.symptom_onset).isoformat()}.csv",
               exposure_to_csv(result))
        run.diagnostics["exposed_users"] += len(result.exposed)
    run.finish("tracing")


def stage_notify(records, days, crowding, cfg, out: Path, run: PipelineRun):
    records_by_day: dict[dt.date, dict[str, list[BeaconRecord]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        day = utc_date(r.t)
        records_by_day[day][r.user_a].append(r)
        records_by_day[day][r.user_b].append(r)

    deduped = {}
    for day in sorted(set(days) | set(records_by_day)):
        hotspots = crowding.get(day, (None, []))[1]
        deduped[day] = dedup_daily(days.get(day, []), hotspots)

    for day in sorted(records_by_day):
        hotspots = crowding.get(day, (None, []))[1]
        hot = [h for h in hotspots if h.is_hot]
        yesterday = deduped.get(day - dt.timedelta(days=1), [])
        summaries = []
        for user in sorted(records_by_day[day]):
            visits = sojourn_in_hotspots(records_by_day[day][user], hot, cfg)
            s = daily_summary(user, deduped[day], yesterday, visits, cfg, date=day)
            summaries.append(s)
            run.diagnostics["crowding_alerts"] += len(s.crowding_visits)
        metrics = population_metrics(summaries, hotspots, date=day)
        _write(out / f"summaries_{day.isoformat()}.csv", summaries_to_csv(summaries))
        _write(out / f"metrics_{day.isoformat()}.json", metrics.to_json())
        run.diagnostics["summaries"] += len(summaries)
    run.finish("notify")


def _load_encounter_dir(d: Path) -> dict[int, list[Encounter]]:
    out = {}
    for path in sorted(d.glob("encounters_*.csv")):
        ws = int(path.stem.split("_", 1)[1])
        out[ws] = encounters_from_csv(path.read_text(encoding="utf-8"))
    return out


def _load_crowding_dir(d: Path, days, cfg) -> dict:
    result = {}
    for day, encs in days.items():
        path = d / f"labels_{day.isoformat()}.csv"
        if not path.is_file():
            raise CliError(f"missing {path.name}; run the hotspots stage first",
                           EXIT_MISSING_INPUT)
        if not encs:
            result[day] = (None, [])
            continue
        lm = labels_from_csv(path.read_text(encoding="utf-8"), encs)
        result[day] = (lm, score_hotspots(lm, cfg))
    return result


def _parse_report(text: str, reported_at: int | None) -> HealthReport:
    try:
        user, onset = text.split(",")
        onset_ms = int(onset)
    except ValueError:
        raise CliError(f"--report expects USER,ONSET_MS, got {text!r}", EXIT_USAGE) from None
    try:
        return HealthReport(user.strip(), onset_ms,
                            reported_at if reported_at is not None else onset_ms)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def _log_chunk(chunk: Chunk, run: PipelineRun):
    run.diagnostics["records_read"] += len(chunk.records)
    run.diagnostics["records_dropped"] += chunk.drop_count
    run.diagnostics["records_duplicate"] += chunk.duplicate_count
    logger.info("ingest: %d records kept, %d dropped, %d duplicates",
                len(chunk.records), chunk.drop_count, chunk.duplicate_count)


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    sc = ScenarioConfig(
        n_agents=args.agents, duration_s=args.duration, area_m=args.area,
        mobility=args.mobility, gathering_spots=args.spots,
        distance_noise_sd_m=args.noise, beacon_drop_prob=args.drop, seed=args.seed,
    )
    records, gt = generate(sc)
    out = Path(args.out)
    name = "records.csv" if args.format == "lines" else "records.bin"
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_bytes(dumps(records, args.format))
    _write(out / "ground_truth.json", gt.to_json())
    logger.info("simulate: %d agents, %d records -> %s", sc.n_agents, len(records), out / name)
    return EXIT_OK


def cmd_encounters(args) -> int:
    cfg = load_config(args)
    run = PipelineRun(cfg, args.input, Path(args.out))
    chunk = _read_inputs(args.input, args.format)
    _log_chunk(chunk, run)
    run.finish("ingest")
    with worker_pool(args.parallel) as pool:
        stage_encounters(chunk.records, cfg, run.outputs_dir, run, pool, args.parallel)
    return EXIT_OK


def cmd_hotspots(args) -> int:
    cfg = load_config(args)
    src = _require_dir(args.source)
    run = PipelineRun(cfg, [], Path(args.out or src))
    run.stages_completed = ["ingest", "encounters"]
    days = _group_days(_load_encounter_dir(src))
    with worker_pool(args.parallel) as pool:
        stage_crowding(days, cfg, run.outputs_dir, run, args.parallel, pool)
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg = load_config(args)
    src = _require_dir(args.source)
    run = PipelineRun(cfg, [], Path(args.out or src))
    run.stages_completed = ["ingest", "encounters", "crowding"]
    encs = [e for ws, es in sorted(_load_encounter_dir(src).items()) for e in es]
    stage_tracing(encs, _parse_report(args.report, args.reported_at), cfg, run.outputs_dir,
                  run, args.max_hops)
    return EXIT_OK


def cmd_notify(args) -> int:
    cfg = load_config(args)
    src = _require_dir(args.source)
    chunk = _read_inputs(args.input, args.format)
    run = PipelineRun(cfg, args.input, Path(args.out or src))
    run.stages_completed = ["ingest", "encounters", "crowding", "tracing"]
    days = _group_days(_load_encounter_dir(src))
    crowding = _load_crowding_dir(src, days, cfg)
    stage_notify(chunk.records, days, crowding, cfg, run.outputs_dir, run)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args)
    report = _parse_report(args.report, args.reported_at) if args.report else None
    out = Path(args.out)
    run = PipelineRun(cfg, args.input, out)
    chunk = _read_inputs(args.input, args.format)
    _log_chunk(chunk, run)
    run.finish("ingest")
    with worker_pool(args.parallel) as pool:
        by_window = stage_encounters(chunk.records, cfg, out, run, pool, args.parallel)
        days = _group_days(by_window)
        crowding = stage_crowding(days, cfg, out, run, args.parallel, pool)
    all_encounters = [e for ws in sorted(by_window) for e in by_window[ws]]
    stage_tracing(all_encounters, report, cfg, out, run, args.max_hops)
    stage_notify(chunk.records, days, crowding, cfg, out, run)
    _write(out / "run.json", run.to_json())
    for key, value in sorted(run.diagnostics.items()):
        print(f"{key}: {value}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    rows = run_bench(args.points, args.workers, args.seed, load_config(args))
    print(format_table(rows, args.points))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proxtrace", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def with_config(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config value (repeatable)")

    def with_inputs(p, required=True):
        p.add_argument("--input", action="append", required=required, default=[],
                       help="beacon record file (repeatable)")
        p.add_argument("--format", choices=FORMATS, default="lines")

    p = sub.add_parser("simulate", help="generate synthetic beacon records")
    p.add_argument("--agents", type=int, default=50)
    p.add_argument("--mobility", choices=MOBILITY, default="gathering")
    p.add_argument("--spots", type=int, default=3)
    p.add_argument("--duration", type=float, default=4 * 3600, help="seconds")
    p.add_argument("--area", type=float, default=2000.0, help="square side in meters")
    p.add_argument("--noise", type=float, default=0.0, help="distance noise sd in meters")
    p.add_argument("--drop", type=float, default=0.0, help="beacon drop probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=FORMATS, default="lines")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("encounters", help="detect encounters per window")
    with_config(p)
    with_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=_positive, default=1)
    p.set_defaults(func=cmd_encounters)

    p = sub.add_parser("hotspots", help="cluster encounters into daily hotspots")
    with_config(p)
    p.add_argument("--from", dest="source", required=True, help="directory with encounter CSVs")
    p.add_argument("--out")
    p.add_argument("--parallel", type=_positive, default=1)
    p.set_defaults(func=cmd_hotspots)

    p = sub.add_parser("trace", help="exposure query for a reported user")
    with_config(p)
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--report", required=True, metavar="USER,ONSET_MS")
    p.add_argument("--reported-at", type=int)
    p.add_argument("--max-hops", type=_positive, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("notify", help="daily summaries and population metrics")
    with_config(p)
    with_inputs(p)
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_notify)

    p = sub.add_parser("run", help="all stages end to end")
    with_config(p)
    with_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=_positive, default=1)
    p.add_argument("--report", metavar="USER,ONSET_MS")
    p.add_argument("--reported-at", type=int)
    p.add_argument("--max-hops", type=_positive, default=1)
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; run is deterministic")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="time serial vs grid-parallel DBSCAN")
    with_config(p)
    p.add_argument("--points", type=_positive, default=100_000)
    p.add_argument("--workers", "--parallel", dest="workers", type=_positive, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"proxtrace: {exc}", file=sys.stderr)
        return exc.code
    except (AssertionError, ArithmeticError) as exc:
        print(f"proxtrace: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
