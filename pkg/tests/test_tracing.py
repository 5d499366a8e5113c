import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import enc, uid
from oracles import brute_trace
from proxtrace.core_types import MS_PER_DAY, EngineConfig
from proxtrace.exceptions import InvalidQueryError
from proxtrace.tracing import (
    HealthReport,
    build_graph,
    cumulative_contact_alert,
    exposure_to_csv,
    lookback_interval,
    trace,
)

U1, U2, U3, U4, U5 = (uid(f"U{k}") for k in range(1, 6))
DAY0 = 1_591_000_000_000 // 3_600_000 * 3_600_000


def figure_graph():
    # U1-U2, U2-U3, U3-U4, U4-U5 on consecutive days
    return build_graph([
        enc(U1, U2, DAY0 - 3 * MS_PER_DAY),
        enc(U2, U3, DAY0 - 2 * MS_PER_DAY),
        enc(U3, U4, DAY0 - 1 * MS_PER_DAY),
        enc(U4, U5, DAY0 - 1 * MS_PER_DAY),
    ])


def test_direct_contacts_of_positive_user(cfg):
    res = trace(figure_graph(), HealthReport(U2, DAY0, DAY0), cfg)
    assert set(res.users) == {U1, U3}
    assert all(x.hop == 1 for x in res.exposed)
    assert res.is_sensitive


def test_old_encounter_outside_lookback(cfg):
    g = build_graph([enc(U1, U2, DAY0 - 20 * MS_PER_DAY), enc(U2, U3, DAY0 - MS_PER_DAY)])
    assert trace(g, HealthReport(U2, DAY0, DAY0), cfg).users == [U3]


def test_lookback_bounds_are_inclusive(cfg):
    lo, hi = lookback_interval(HealthReport(U2, DAY0, DAY0 + MS_PER_DAY), cfg)
    assert (lo, hi) == (DAY0 - 14 * MS_PER_DAY, DAY0)
    g = build_graph([enc(U1, U2, lo), enc(U2, U3, hi), enc(U2, U4, hi + 3_600_000)])
    assert set(trace(g, HealthReport(U2, DAY0, DAY0 + MS_PER_DAY), cfg).users) == {U1, U3}
    post = cfg.replace(include_post_onset=True)
    res = trace(g, HealthReport(U2, DAY0, DAY0 + MS_PER_DAY), post)
    assert set(res.users) == {U1, U3, U4}


def test_second_hop(cfg):
    res = trace(figure_graph(), HealthReport(U3, DAY0, DAY0), cfg, max_hops=2)
    hops = {x.user: x.hop for x in res.exposed}
    assert hops == {U2: 1, U4: 1, U1: 2, U5: 2}
    assert [x.hop for x in res.exposed] == sorted(x.hop for x in res.exposed)


def test_user_not_in_graph(cfg):
    res = trace(figure_graph(), HealthReport(uid("nobody"), DAY0, DAY0), cfg)
    assert res.exposed == ()


def test_invalid_hops(cfg):
    for bad in (0, -1, 1.5):
        with pytest.raises(InvalidQueryError):
            trace(figure_graph(), HealthReport(U2, DAY0, DAY0), cfg, max_hops=bad)


def test_report_order_checked():
    with pytest.raises(ValueError):
        HealthReport(U1, DAY0 + 1, DAY0)


def test_parallel_edges_are_kept(cfg):
    g = build_graph([enc(U1, U2, DAY0 - 3_600_000 * k, t1=k, t2=100 + k) for k in range(3)])
    assert g.multiplicity(U2, U1) == 3
    (x,) = trace(g, HealthReport(U1, DAY0, DAY0), cfg).exposed
    assert (x.via_encounters, x.earliest, x.latest) == (3, 0, 102)


def random_edges(rng, n_users=15, n_edges=40):
    users = [uid(f"g{k}") for k in range(n_users)]
    edges = []
    for _ in range(n_edges):
        a, b = rng.choice(n_users, 2, replace=False)
        ws = DAY0 - int(rng.integers(-5, 25)) * MS_PER_DAY
        edges.append((users[a], users[b], ws))
    return users, edges


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_matches_breadth_first_oracle(seed, hops):
    rng = np.random.default_rng(seed)
    users, edges = random_edges(rng)
    cfg = EngineConfig()
    g = build_graph([enc(a, b, ws) for a, b, ws in edges])
    report = HealthReport(users[0], DAY0, DAY0)
    lo, hi = lookback_interval(report, cfg)
    got = {x.user: x.hop for x in trace(g, report, cfg, hops).exposed}
    assert got == brute_trace(edges, users[0], lo, hi, hops)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_more_hops_and_longer_lookback_expose_more(seed, days):
    rng = np.random.default_rng(seed)
    users, edges = random_edges(rng)
    g = build_graph([enc(a, b, ws) for a, b, ws in edges])
    report = HealthReport(users[0], DAY0, DAY0)
    short = EngineConfig(lookback_days=days)
    long = EngineConfig(lookback_days=days + 1)
    for hops in (1, 2, 3):
        fewer = set(trace(g, report, short, hops).users)
        assert fewer <= set(trace(g, report, long, hops).users)
        assert fewer <= set(trace(g, report, short, hops + 1).users)


def test_exposure_csv_marks_sensitive(cfg):
    text = exposure_to_csv(trace(figure_graph(), HealthReport(U2, DAY0, DAY0), cfg))
    lines = text.splitlines()
    assert lines[0] == "# sensitive=true"
    assert lines[1] == "user,hop,via_encounters,earliest_ms,latest_ms"
    assert len(lines) == 4


def test_cumulative_alert_sums_short_contacts(cfg):
    day = [enc(U1, U2, 0, cum=400.0), enc(U1, U2, 3_600_000, cum=300.0),
           enc(U1, U3, 0, cum=400.0)]
    assert cumulative_contact_alert(day, U1, cfg) == [U2]
    assert cumulative_contact_alert(day[:1], U1, cfg) == []
    assert cumulative_contact_alert([enc(U1, U4, cum=600.0)], U4, cfg) == [U1]
