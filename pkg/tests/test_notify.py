import datetime as dt
import json
import math
from fractions import Fraction


from conftest import BASE_LAT, BASE_LON, enc, rec, uid
from proxtrace.core_types import (
    M_PER_DEG_LAT,
    M_PER_DEG_LON_EQUATOR,
    EngineConfig,
    GeoPoint,
    unproject_local,
)
from proxtrace.crowding import dbscan
from proxtrace.notify import (
    DailySummary,
    daily_summary,
    day_start_ms,
    dedup_daily,
    grid_cell,
    population_metrics,
    sojourn_in_hotspots,
    summaries_to_csv,
    utc_date,
)

A, B, C, U = (uid(x) for x in "ABCU")
ORIGIN = GeoPoint(BASE_LAT, BASE_LON)
DAY = dt.date(2020, 6, 1)
T0 = day_start_ms(DAY)
HOUR = 3_600_000


def near(x, y):
    p = unproject_local(x, y, ORIGIN)
    return p.lat, p.lon


def test_day_helpers():
    assert utc_date(T0) == DAY and utc_date(T0 - 1) == DAY - dt.timedelta(days=1)
    assert T0 == 1_590_969_600_000


def test_repeated_pair_at_same_place_counts_once():
    lat, lon = near(0, 0)
    day = [enc(A, B, T0 + k * HOUR, t1=T0 + k * HOUR, lat=lat, lon=lon) for k in range(3)]
    kept = dedup_daily(day)
    assert kept == [day[0]]


def test_same_pair_at_two_places_counts_twice():
    day = [enc(A, B, T0, t1=T0, lat=near(0, 0)[0], lon=near(0, 0)[1]),
           enc(A, B, T0 + HOUR, t1=T0 + HOUR, lat=near(800, 0)[0], lon=near(800, 0)[1])]
    assert len(dedup_daily(day)) == 2


def test_noise_points_in_one_grid_cell_merge():
    # two noise encounters 40 m apart inside one 100 m cell
    row, col = grid_cell(ORIGIN)
    lat0 = (row + 0.5) * 100 / M_PER_DEG_LAT
    corner = GeoPoint(row * 100 / M_PER_DEG_LAT,
                      col * 100 / (math.cos(math.radians(lat0)) * M_PER_DEG_LON_EQUATOR))
    p = unproject_local(5, 5, corner)
    q = unproject_local(45, 5, corner)
    assert grid_cell(p) == grid_cell(q) == (row, col)
    day = [enc(A, B, T0, t1=T0, lat=p.lat, lon=p.lon),
           enc(A, B, T0 + HOUR, t1=T0 + HOUR, lat=q.lat, lon=q.lon)]
    assert len(dedup_daily(day)) == 1


def test_hotspot_membership_defines_location(cfg):
    crowd = [enc(uid(f"c{k}"), uid(f"d{k}"), T0, lat=near(k, 0)[0], lon=near(k, 0)[1])
             for k in range(6)]
    # A-B twice inside the crowd, far enough apart to land in different grid cells
    ab = [enc(A, B, T0, t1=T0, lat=near(-40, 0)[0], lon=near(-40, 0)[1]),
          enc(A, B, T0 + HOUR, t1=T0 + HOUR, lat=near(45, 0)[0], lon=near(45, 0)[1])]
    _, hs = dbscan(crowd + ab, cfg)
    assert len(hs) == 1 and all(e in hs[0].members for e in ab)
    kept = dedup_daily(crowd + ab, hs)
    assert len([e for e in kept if e.pair == ab[0].pair]) == 1


def test_dedup_is_idempotent():
    day = [enc(A, B, T0 + k * HOUR, t1=T0 + k * HOUR, lat=near(k * 300, 0)[0],
               lon=near(k * 300, 0)[1]) for k in range(4)]
    day += [enc(A, C, T0, t1=T0), enc(A, C, T0 + HOUR, t1=T0 + HOUR)]
    once = dedup_daily(day)
    assert dedup_daily(once) == once


def test_daily_summary(cfg):
    today = [enc(U, A, T0), enc(U, B, T0), enc(U, C, T0 + HOUR), enc(A, B, T0)]
    yesterday = [enc(U, A, T0 - 86_400_000)]
    s = daily_summary(U, today, yesterday, [(0, 1200.0), (1, 599.0), (2, 600.0)], cfg)
    assert s.unique_encounters == 3
    assert s.distinct_partners == 3
    assert s.delta_vs_prev_day == 2
    assert set(s.new_partners) == {B, C}
    assert s.crowding_visits == ((0, 1200.0), (2, 600.0))
    assert s.date == DAY


def test_sojourn_spans_first_to_last_fix(cfg):
    crowd = [enc(uid(f"c{k}"), uid(f"d{k}"), T0, lat=near(k, 0)[0], lon=near(k, 0)[1])
             for k in range(6)]
    _, (h,) = dbscan(crowd, cfg)
    lat, lon = near(2, 1)
    fixes = [rec(U, A, T0 / 1000 + (20 * k if k < 39 else 800), 3.0, lat, lon) for k in range(40)]
    far_lat, far_lon = near(900, 0)
    fixes.append(rec(U, A, T0 / 1000 + 5000, 3.0, far_lat, far_lon))
    ((cid, secs),) = sojourn_in_hotspots(fixes, [h], cfg)
    assert cid == h.cluster_id
    assert secs == 800.0


def test_population_metrics():
    summaries = [DailySummary(uid(k), DAY, n, n, 0, (), ()) for k, n in enumerate((1, 2, 3))]
    crowd = [enc(uid(f"c{k}"), uid(f"d{k}"), T0, lat=near(k, 0)[0], lon=near(k, 0)[1])
             for k in range(9)]
    _, hs = dbscan(crowd, EngineConfig())
    m = population_metrics(summaries, hs)
    assert m.active_users == 3
    assert m.avg_encounters_per_user == Fraction(2)
    assert m.largest_event_encounters == 9
    assert json.loads(m.to_json())["avg_encounters_per_user"] == 2.0


def test_population_metrics_empty_day():
    m = population_metrics([], [], DAY)
    assert (m.active_users, m.avg_encounters_per_user, m.largest_event_encounters) == (0, 0, 0)


def test_average_is_exact():
    summaries = [DailySummary(uid(k), DAY, 1, 1, 0, (), ()) for k in range(3)]
    summaries.append(DailySummary(uid(9), DAY, 0, 0, 0, (), ()))
    assert population_metrics(summaries, []).avg_encounters_per_user == Fraction(3, 4)
    summaries = [DailySummary(uid(k), DAY, 1 if k else 0, 1, 0, (), ()) for k in range(10)]
    assert population_metrics(summaries, []).avg_encounters_per_user == Fraction(9, 10)


def test_summaries_csv(cfg):
    s = daily_summary(U, [enc(U, A, T0)], [], [(0, 700.0)], cfg)
    lines = summaries_to_csv([s]).splitlines()
    assert lines[0].startswith("user,date,unique_encounters")
    assert lines[1] == f"{U},2020-06-01,1,1,1,{A},0:700"
