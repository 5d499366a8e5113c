"""Chunk decoding, record normalization and fixed-window partitioning.

Two on-disk encodings are supported. ``lines`` is headerless UTF-8 CSV with
one ``user_a,user_b,t_ms,distance_m,lat,lon`` record per line. ``packed`` is
a sequence of records each preceded by a little-endian ``u32`` byte length,
the body being two 32-byte ASCII ids, a ``u64`` millisecond timestamp and
three ``f64`` values in the same order as the CSV fields.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from proxtrace.core_types import BeaconRecord
from proxtrace.exceptions import ChunkFormatError, SelfBeaconError
from proxtrace.validation import record_problem

logger = logging.getLogger(__name__)

FORMATS = ("lines", "packed")

_BODY = struct.Struct("<32s32sQddd")
_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class Chunk:
    records: tuple[BeaconRecord, ...]
    source_id: str = ""
    received_at: int = 0
    drop_count: int = 0
    duplicate_count: int = 0


@dataclass(frozen=True)
class Window:
    """Half-open interval ``[start, end)`` in ms with the records inside it."""

    start: int
    end: int
    records: tuple[BeaconRecord, ...]


def _make_record(a, b, t, d, lat, lon) -> BeaconRecord | None:
    try:
        rec = BeaconRecord.normalized(a, b, t, d, lat, lon)
    except SelfBeaconError:
        return None
    return None if record_problem(rec) else rec


def _parse_line(line: str) -> BeaconRecord | None:
    fields = line.split(",")
    if len(fields) != 6:
        return None
    a, b, t, d, lat, lon = (f.strip() for f in fields)
    try:
        t_ms = int(t)
        values = float(d), float(lat), float(lon)
    except ValueError:
        return None
    return _make_record(a, b, t_ms, *values)


def _iter_lines(data: bytes):
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ChunkFormatError(f"lines chunk is not valid UTF-8: {exc}") from None
    for line in text.splitlines():
        if line.strip():
            yield _parse_line(line)


def _iter_packed(data: bytes):
    view = memoryview(data)
    pos = 0
    while pos < len(view):
        if pos + _LEN.size > len(view):
            raise ChunkFormatError(f"truncated length prefix at byte {pos}")
        (size,) = _LEN.unpack_from(view, pos)
        pos += _LEN.size
        if pos + size > len(view):
            raise ChunkFormatError(f"record at byte {pos} runs past end of chunk")
        body = view[pos:pos + size]
        pos += size
        if size != _BODY.size:
            yield None
            continue
        a, b, t, d, lat, lon = _BODY.unpack(body)
        try:
            ua, ub = a.decode("ascii"), b.decode("ascii")
        except UnicodeDecodeError:
            yield None
            continue
        yield _make_record(ua, ub, t, d, lat, lon)


def normalize_records(records: Iterable[BeaconRecord]) -> tuple[tuple[BeaconRecord, ...], int]:
    """Sort records by time and drop exact retransmissions.

    Two records are duplicates when pair, timestamp and distance all agree;
    the first one in sort order is kept. Returns ``(records, n_duplicates)``.
    """
    ordered = sorted(records, key=BeaconRecord.sort_key)
    out: list[BeaconRecord] = []
    seen: set = set()
    for rec in ordered:
        key = (rec.user_a, rec.user_b, rec.t, rec.distance_m)
        if key in seen:
            continue
        seen.add(key)
        out.append(rec)
    return tuple(out), len(ordered) - len(out)


def parse_chunk(data: bytes, format: str = "lines", source_id: str = "",
                received_at: int = 0) -> Chunk:
    """Decode one chunk; malformed records are dropped and counted."""
    if format == "lines":
        parsed = _iter_lines(data)
    elif format == "packed":
        parsed = _iter_packed(data)
    else:
        raise ValueError(f"unknown chunk format {format!r}; expected one of {FORMATS}")
    good: list[BeaconRecord] = []
    dropped = 0
    for rec in parsed:
        if rec is None:
            dropped += 1
        else:
            good.append(rec)
    records, dups = normalize_records(good)
    if dropped:
        logger.warning("chunk %s: dropped %d malformed record(s)", source_id or "<bytes>", dropped)
    return Chunk(records, source_id, received_at, dropped, dups)


def read_chunk_file(path, format: str = "lines") -> Chunk:
    path = Path(path)
    return parse_chunk(path.read_bytes(), format, source_id=str(path.name))


def merge_chunks(chunks: Sequence[Chunk]) -> Chunk:
    """Concatenate chunks (e.g. several files or retransmissions) into one."""
    records, dups = normalize_records(r for c in chunks for r in c.records)
    return Chunk(
        records,
        source_id="+".join(c.source_id for c in chunks),
        received_at=max((c.received_at for c in chunks), default=0),
        drop_count=sum(c.drop_count for c in chunks),
        duplicate_count=sum(c.duplicate_count for c in chunks) + dups,
    )


def window_records(records: Iterable[BeaconRecord], window_s: float) -> list[Window]:
    """Group records into aligned half-open windows, omitting empty ones."""
    if not window_s > 0:
        raise ValueError("window_s must be > 0")
    width = int(round(window_s * 1000))
    buckets: dict[int, list[BeaconRecord]] = {}
    for rec in records:
        buckets.setdefault(rec.t // width, []).append(rec)
    return [
        Window(k * width, (k + 1) * width, tuple(sorted(buckets[k], key=BeaconRecord.sort_key)))
        for k in sorted(buckets)
    ]


def format_float(value: float) -> str:
    # repr round-trips exactly, which keeps CSV artifacts byte-stable
    return repr(float(value))


def dumps_lines(records: Iterable[BeaconRecord]) -> bytes:
    rows = [
        f"{r.user_a},{r.user_b},{r.t},{format_float(r.distance_m)},"
        f"{format_float(r.location.lat)},{format_float(r.location.lon)}\n"
        for r in records
    ]
    return "".join(rows).encode("utf-8")


def dumps_packed(records: Iterable[BeaconRecord]) -> bytes:
    parts = []
    for r in records:
        body = _BODY.pack(r.user_a.encode("ascii"), r.user_b.encode("ascii"), r.t,
                          r.distance_m, r.location.lat, r.location.lon)
        parts.append(_LEN.pack(len(body)) + body)
    return b"".join(parts)


def dumps(records: Iterable[BeaconRecord], format: str = "lines") -> bytes:
    if format == "lines":
        return dumps_lines(records)
    if format == "packed":
        return dumps_packed(records)
    raise ValueError(f"unknown chunk format {format!r}")

