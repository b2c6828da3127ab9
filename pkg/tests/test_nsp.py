import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ledmm import datagen
from ledmm.ledmap.fitting import ErrorDistribution
from ledmm.matcher import MatchParams, WindowMatcher, match_trajectory, score_path
from ledmm.netgraph import CandidatePoint, NetPath, Router
from ledmm.nsp import NspFlag, NspParams, depth_bound, detect

from conftest import geo

STRICT = NspParams(n=3, err=10.0, max_err=40.0, len=50.0)


def sigma5_led():
    net = datagen.gen_city(3, 3, seed=0)
    return datagen.uniform_led(net, ErrorDistribution("gaussian", (0.0, 5.0)))


def window(errs, step=30.0):
    """GPS points displaced north by ``errs`` from their matches on the x axis."""
    pts = [geo(step * i, e) for i, e in enumerate(errs)]
    matches = [CandidatePoint(geo(step * i, 0.0), "s", step * i, float(e)) for i, e in enumerate(errs)]
    return matches, pts


def test_detect_flags_peak():
    led = sigma5_led()
    m, p = window([12, 30, 55, 28, 14])
    assert detect(m, p, led, STRICT) == NspFlag(0, 4, 2, 55.0)


@pytest.mark.parametrize("errs, params", [
    ([12, 30, 35, 28, 14], STRICT),                                              # peak below max_err
    ([12, 30, 55, 28, 14], NspParams(n=6, err=10, max_err=40, len=50)),          # run too short
    ([12, 30, 55, 28, 14], NspParams(n=3, err=10, max_err=40, len=500)),         # chord too short
    ([3, 4, 55, 5, 2], STRICT),                                                  # single spike
])
def test_detect_rejections(errs, params):
    m, p = window(errs)
    assert detect(m, p, sigma5_led(), params) is None


def test_detect_deviation_gate():
    # under a very wide error law, 55 m is unremarkable
    wide = datagen.uniform_led(datagen.gen_city(3, 3, seed=0), ErrorDistribution("gaussian", (0.0, 60.0)))
    m, p = window([12, 30, 55, 28, 14])
    assert detect(m, p, wide, STRICT) is None


def test_detect_prefers_longest_run():
    m, p = window([25, 45, 25, 0, 0, 25, 30, 50, 30, 25, 0])
    flag = detect(m, p, sigma5_led(), STRICT)
    assert (flag.start_idx, flag.end_idx, flag.peak_idx) == (5, 9, 7)


def test_detect_misaligned():
    m, p = window([1, 2, 3])
    with pytest.raises(ValueError):
        detect(m, p[:2], sigma5_led(), STRICT)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 80), min_size=2, max_size=12), st.data())
def test_detect_monotone_in_errors(errs, data):
    led = sigma5_led()
    bumps = data.draw(st.lists(st.floats(0, 30), min_size=len(errs), max_size=len(errs)))
    worse = [e + b for e, b in zip(errs, bumps)]
    params = NspParams()
    m, pts = window(errs)
    # same GPS points, only the point-to-path errors grow
    m_worse, _ = window(worse)
    if detect(m, pts, led, params) is not None:
        assert detect(m_worse, pts, led, params) is not None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 80), min_size=2, max_size=12), st.integers(0, 2), st.floats(0, 10),
       st.floats(0, 10), st.floats(0, 100))
def test_detect_monotone_in_thresholds(errs, dn, derr, dmax, dlen):
    led = sigma5_led()
    base = NspParams(n=2, err=15.0, max_err=30.0, len=40.0)
    tighter = NspParams(n=2 + dn, err=15.0 + derr, max_err=30.0 + derr + dmax, len=40.0 + dlen)
    if detect(*window(errs), led, base) is None:
        assert detect(*window(errs), led, tighter) is None


def test_params_validation_and_depth_bound():
    with pytest.raises(ValueError):
        NspParams(n=1)
    with pytest.raises(ValueError):
        NspParams(err=50, max_err=40)
    with pytest.raises(ValueError):
        NspParams(len=0)
    assert depth_bound(600.0, NspParams(len=80.0)) == 9
    assert depth_bound(0.0, NspParams()) == 1


# -- repair -----------------------------------------------------------------------------

def test_repair_never_lowers_window_score():
    for seed in range(8):
        f = datagen.gen_detour_fixture(seed)
        led = datagen.uniform_led(f.net, ErrorDistribution("gaussian", (0.0, 5.0)))
        ctx = WindowMatcher(f.net, led, MatchParams())
        pts = f.trajectory.points
        ctx._use_points(pts)
        ctx._depth_limit = 5
        router = Router(f.net)
        a = ctx.candidates_at(pts[0])[0]
        b = ctx.candidates_at(pts[-1])[0]
        plain = ctx._scored(router.route(a, b), pts)
        fixed = ctx.maybe_repair(plain, 0, len(pts) - 1, 0)
        assert fixed.f >= plain.f
        assert fixed.f == pytest.approx(score_path(f.net, led, fixed.path, pts)[0], abs=1e-9)


def test_detour_recovered_and_nonsp_misses_it():
    hits = 0
    for seed in range(10):
        f = datagen.gen_detour_fixture(seed)
        led = datagen.uniform_led(f.net, ErrorDistribution("gaussian", (0.0, 5.0)))
        on = match_trajectory(f.net, led, f.trajectory)
        off = match_trajectory(f.net, led, f.trajectory, MatchParams(repair=False))
        hits += set(f.detour_segments) <= set(on.segments)
        assert "B1-C1" in off.segments
    assert hits == 10


def simple_paths(net, src, dst):
    out = []

    def walk(node, segs, seen):
        if node == dst:
            out.append(tuple(segs))
            return
        for sid in sorted(s for s, seg in net.segments.items() if seg.start == node):
            nxt = net.segments[sid].end
            if nxt not in seen:
                walk(nxt, segs + [sid], seen | {nxt})

    walk(src, [], {src})
    return out


def test_two_detours_match_exhaustive_best():
    f = datagen.gen_detour_fixture(3, detours=2)
    led = datagen.uniform_led(f.net, ErrorDistribution("gaussian", (0.0, 5.0)))
    pts = f.trajectory.points
    scored = []
    for segs in simple_paths(f.net, "A", "D"):
        length = sum(f.net.segments[s].l for s in segs)
        path = NetPath(segs, 0.0, f.net.segments[segs[-1]].l, length)
        scored.append((score_path(f.net, led, path, pts)[0], segs))
    assert len(scored) == 4
    best = max(scored)[1]
    assert best == f.truth.path.segments
    got = match_trajectory(f.net, led, f.trajectory)
    assert set(f.detour_segments) <= set(got.segments)
    assert "B1-C1" not in got.segments and "B2-C2" not in got.segments
