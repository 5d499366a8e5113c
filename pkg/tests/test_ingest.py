import random
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import rec, uid
from proxtrace.exceptions import ChunkFormatError
from proxtrace.ingest import (
    dumps_lines,
    dumps_packed,
    normalize_records,
    parse_chunk,
    window_records,
)

A, B, C = uid("a"), uid("b"), uid("c")


def line(a, b, t, d, lat=35.0, lon=-90.0):
    return f"{a},{b},{t},{d},{lat},{lon}"


def test_lines_sorted_by_time():
    data = "\n".join([line(A, B, 3000, 1.0), line(A, B, 1000, 2.0), line(B, A, 2000, 3.0)])
    chunk = parse_chunk(data.encode())
    assert [r.t for r in chunk.records] == [1000, 2000, 3000]
    assert all(r.user_a < r.user_b for r in chunk.records)
    assert chunk.drop_count == 0


def test_missing_gps_is_dropped_and_counted():
    data = "\n".join([line(A, B, 1000, 1.0), f"{A},{B},2000,1.0,,", line(A, C, 3000, 1.0)])
    chunk = parse_chunk(data.encode())
    assert len(chunk.records) == 2
    assert chunk.drop_count == 1


def test_malformed_variant_corpus():
    variants = [
        (line(C, C, 1000, 1.0), True),              # self pair
        (line(A, B, 1000, 1.0, lat=91.0), True),    # latitude out of range
        (line(A, B, 1000, 1.0, lon=-181.0), True),  # longitude out of range
        (line(A, B, 1000, -0.5), True),             # negative distance
        (line(B, A, 1000, 1.0), False),             # reversed pair, normalised
        (f" {A} , {B} ,1000, 1.0 ,35.0,-90.0", False),
        (line(A, B, 1000, 0.0), False),
        (line(A, B, 10**13, 1.0), False),
        (line(A, B, 1000, 1.0, lat=90.0), False),
        (line(A, B, 1000, 15.0), False),
    ]
    for text, should_drop in variants:
        chunk = parse_chunk(text.encode())
        assert chunk.drop_count == int(should_drop), text
        assert len(chunk.records) == int(not should_drop), text


@pytest.mark.parametrize("text", [
    line(A, B, 1000, "nan"),
    line(A, B, 1000, "inf"),
    line("xyz", B, 1000, 1.0),
    line(A.upper(), B, 1000, 1.0),
    line(A, B, -5, 1.0),
    line(A, B, "1.5", 1.0),
    f"{A},{B},1000,1.0,35.0",
    f"{A},{B},1000,1.0,35.0,-90.0,extra",
])
def test_other_malformed_records_drop(text):
    chunk = parse_chunk(text.encode())
    assert chunk.records == ()
    assert chunk.drop_count == 1


def test_empty_container_is_empty_chunk():
    assert parse_chunk(b"").records == ()
    assert parse_chunk(b"", "packed").records == ()


def test_undecodable_containers_raise():
    with pytest.raises(ChunkFormatError):
        parse_chunk(b"\xff\xfe\x00garbage")
    good = dumps_packed([rec(A, B, 1, 2.0)])
    with pytest.raises(ChunkFormatError):
        parse_chunk(good[:-3], "packed")
    with pytest.raises(ChunkFormatError):
        parse_chunk(good + b"\x01", "packed")


def test_packed_layout_is_bit_exact():
    r = rec(A, B, 1.5, 2.25, 35.5, -90.25)
    blob = dumps_packed([r])
    assert len(blob) == 4 + 96
    assert struct.unpack("<I", blob[:4]) == (96,)
    a, b, t, d, lat, lon = struct.unpack("<32s32sQddd", blob[4:])
    assert (a.decode(), b.decode(), t, d, lat, lon) == (r.user_a, r.user_b, 1500, 2.25, 35.5, -90.25)


def test_packed_wrong_length_record_is_dropped():
    blob = struct.pack("<I", 3) + b"abc" + dumps_packed([rec(A, B, 1, 2.0)])
    chunk = parse_chunk(blob, "packed")
    assert chunk.drop_count == 1 and len(chunk.records) == 1


def test_lines_and_packed_roundtrip():
    rng = random.Random(3)
    records = [rec(rng.choice([A, B]), C, rng.randint(0, 10**6) / 1000, rng.uniform(0, 30),
                   rng.uniform(-80, 80), rng.uniform(-170, 170)) for _ in range(50)]
    expected, _ = normalize_records(records)
    assert parse_chunk(dumps_lines(records)).records == expected
    assert parse_chunk(dumps_packed(records), "packed").records == expected


def test_duplicates_removed_on_ingest():
    data = "\n".join([line(A, B, 1000, 1.0), line(B, A, 1000, 1.0), line(A, B, 1000, 2.0)])
    chunk = parse_chunk(data.encode())
    assert len(chunk.records) == 2
    assert chunk.duplicate_count == 1


def test_parse_is_independent_of_line_order():
    rng = random.Random(11)
    lines = [line(rng.choice([A, B]), C, rng.randint(0, 10**7), rng.uniform(0, 20)) for _ in range(200)]
    first = parse_chunk("\n".join(lines).encode())
    rng.shuffle(lines)
    assert parse_chunk("\n".join(lines).encode()) == first


def test_normalization_idempotent():
    chunk = parse_chunk("\n".join(line(B, A, t, 1.0) for t in (5, 1, 3)).encode())
    again, dups = normalize_records(chunk.records)
    assert again == chunk.records and dups == 0


def test_window_boundary_half_open():
    records = [rec(A, B, 0, 1.0), rec(A, B, 3599, 1.0), rec(A, B, 3600, 1.0)]
    windows = window_records(records, 3600)
    assert [(w.start, w.end) for w in windows] == [(0, 3_600_000), (3_600_000, 7_200_000)]
    assert [len(w.records) for w in windows] == [2, 1]


def test_window_empty():
    assert window_records([], 3600) == []


@given(st.lists(st.integers(0, 10 * 86_400_000), max_size=1000), st.sampled_from([60, 900, 3600]))
def test_window_conservation(times, width):
    records = [rec(A, B, t / 1000, 1.0) for t in times]
    windows = window_records(records, width)
    assert sum(len(w.records) for w in windows) == len(records)
    starts = [w.start for w in windows]
    assert starts == sorted(set(starts))
    for w in windows:
        assert w.start % (width * 1000) == 0
        assert all(w.start <= r.t < w.end for r in w.records)
