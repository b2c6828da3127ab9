import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ledmm import datagen
from ledmm.netgraph import (CandidatePoint, GeoPoint, NetworkFormatError, RoadNetwork, Router, candidates,
                            distance, dump_network, join_paths, load_network, path_is_chained, polyline_project,
                            project, project_on, shortest_path, slice_path)

from conftest import geo, line_network


# -- oracles ----------------------------------------------------------------------

def brute_shortest(net, a, b):
    """Minimum length over every node-simple route from a to b (exhaustive DFS)."""
    best = math.inf
    if a.c == b.c and b.offset >= a.offset:
        best = b.offset - a.offset
    src = net.segments[a.c]
    dst = net.segments[b.c]
    head = src.l - a.offset

    def dfs(node, dist, seen):
        nonlocal best
        if node == dst.start:
            best = min(best, dist + b.offset)
        for sid in net.adjacency[node]:
            nxt = net.segments[sid].end
            if nxt not in seen:
                dfs(nxt, dist + net.segments[sid].l, seen | {nxt})

    dfs(src.end, head, {src.end})
    return best


def linear_scan(net, point, radius):
    out = {}
    for sid in net.segments:
        c = project_on(net, point, sid)
        if c.err <= radius:
            out[sid] = c.err
    return out


def random_network(seed, max_nodes=12):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, max_nodes + 1))
    xy = {f"v{i}": (float(rng.uniform(0, 500)), float(rng.uniform(0, 500))) for i in range(n)}
    links = []
    for i, j in itertools.permutations(range(n), 2):
        if rng.random() < 0.3:
            links.append((f"v{i}-v{j}", f"v{i}", f"v{j}"))
    return datagen.network_from_xy(xy, links)


# -- load_network -----------------------------------------------------------------

def test_load_two_node_network_length_at_equator():
    net = load_network(io.StringIO("N A 0 0\nN B 0.001 0\nS AB A B 10\n"))
    assert len(net.nodes) == 2 and len(net.segments) == 1
    # 0.001 deg * 111320 m/deg at latitude 0
    assert net.segments["AB"].l == pytest.approx(111.32, abs=1e-6)


def test_load_without_segments_is_fine():
    net = load_network(io.StringIO("# only nodes\nN A 0 0\nN B 1 1\n"))
    assert len(net.segments) == 0 and net.adjacency == {"A": [], "B": []}


def test_load_dangling_node_names_it():
    with pytest.raises(NetworkFormatError, match="'Z'"):
        load_network(io.StringIO("N A 0 0\nS AZ A Z 10\n"))


def test_load_malformed_line_reports_line_number():
    with pytest.raises(NetworkFormatError, match="line 2"):
        load_network(io.StringIO("N A 0 0\nN B nope 0\n"))
    with pytest.raises(NetworkFormatError, match="line 1"):
        load_network(io.StringIO("X what\n"))


def test_load_zero_length_segment_rejected():
    with pytest.raises(NetworkFormatError, match="zero-length"):
        load_network(io.StringIO("N A 0 0\nN B 0 0\nS AB A B 10\n"))


def test_intermediate_geometry_and_roundtrip():
    text = "N A 0 0\nN B 0.002 0\nS AB A B 12.5 0.001 0.001\n"
    net = load_network(io.StringIO(text))
    s = net.segments["AB"]
    assert s.geometry[0] == net.nodes["A"] and s.geometry[-1] == net.nodes["B"]
    # two legs of the dog-leg, each hypot(111.32, 111.32) at the equator
    assert s.l == pytest.approx(2 * math.hypot(111.32, 111.32), rel=1e-9)
    buf = io.StringIO()
    dump_network(net, buf)
    again = load_network(io.StringIO(buf.getvalue()))
    assert again.segments["AB"].l == s.l
    assert again.segments["AB"].geometry == s.geometry


def test_adjacency_matches_segment_starts():
    net = datagen.gen_city(5, 5, seed=3)
    listed = sorted(sid for outs in net.adjacency.values() for sid in outs)
    assert listed == sorted(net.segments)
    for node, outs in net.adjacency.items():
        assert all(net.segments[s].start == node for s in outs)
    for s in net.segments.values():
        assert abs(s.l - s.cum[-1]) < 0.5


# -- distance ----------------------------------------------------------------------

def test_distance_examples():
    a = GeoPoint(0.0, 0.0)
    assert distance(a, a) == 0.0
    assert distance(a, GeoPoint(0.001, 0.0)) == pytest.approx(111.32, abs=1e-9)


coords = st.floats(min_value=-60, max_value=60, allow_nan=False)


@given(coords, coords, coords, coords)
def test_distance_symmetric_and_nonnegative(a, b, c, d):
    p, q = GeoPoint(a, b), GeoPoint(c, d)
    assert distance(p, q) == distance(q, p) >= 0
    assert (distance(p, q) == 0) == (p.lon == q.lon and p.lat == q.lat)


# -- project ------------------------------------------------------------------------

def test_project_midpoint_offside_and_clamp():
    net = line_network(200, 200)
    seg = net.segments["p0-p1"]
    mid = project(geo(100, 0), seg)
    assert mid.err == pytest.approx(0, abs=1e-6) and mid.offset == pytest.approx(seg.l / 2, abs=1e-6)
    off = project(geo(60, 10), seg)
    assert off.err == pytest.approx(10, abs=1e-3) and off.offset == pytest.approx(60, abs=1e-3)
    beyond = project(geo(260, 5), seg)
    assert beyond.offset == seg.l
    assert beyond.err == pytest.approx(math.hypot(60, 5), abs=1e-3)


@settings(max_examples=200)
@given(st.floats(-200, 400), st.floats(-200, 200))
def test_project_err_bounded_by_vertex_distances(x, y):
    net = datagen.network_from_xy({"a": (0, 0), "b": (200, 0)}, [])
    net = RoadNetwork(net.nodes, [("ab", "a", "b", 10.0, [geo(100, 80)])])
    seg = net.segments["ab"]
    p = geo(x, y)
    c = project(p, seg)
    assert 0 <= c.offset <= seg.l
    assert c.err <= min(distance(p, v, seg.ref_lat) for v in seg.geometry) + 1e-6
    assert c.err == pytest.approx(distance(p, c.position, seg.ref_lat), abs=0.01)


# -- candidates --------------------------------------------------------------------

def cross_network():
    xy = {"o": (0, 0), "e": (100, 0), "w": (-100, 0), "n": (0, 100), "s": (0, -100)}
    links = [(f"o-{k}", "o", k) for k in "ensw"]
    return datagen.network_from_xy(xy, links)


def test_candidates_examples():
    net = cross_network()
    assert candidates(net, geo(50, 60), 5.0) == []
    on = candidates(net, geo(40, 0), 1.0)
    assert [c.c for c in on] == ["o-e"] and on[0].err == pytest.approx(0, abs=1e-6)
    centre = candidates(net, geo(0, 0), 50.0)
    assert sorted(c.c for c in centre) == ["o-e", "o-n", "o-s", "o-w"]
    assert all(c.err < 1e-6 for c in centre)
    # equal errors come back in segment-id order
    assert [c.c for c in centre] == ["o-e", "o-n", "o-s", "o-w"]


def test_candidates_sorted_and_rejects_bad_radius():
    net = datagen.gen_city(6, 6, seed=1)
    found = candidates(net, net.nodes["n2_2"], 150.0)
    keys = [(c.err, c.c) for c in found]
    assert keys == sorted(keys)
    with pytest.raises(ValueError):
        candidates(net, net.nodes["n2_2"], 0.0)


@settings(max_examples=150, deadline=None)
@given(st.floats(-150, 650), st.floats(-150, 650), st.floats(1, 250))
def test_candidates_equal_linear_scan(x, y, radius):
    net = CITY
    p = geo(x, y)
    got = {c.c: c.err for c in candidates(net, p, radius)}
    want = linear_scan(net, p, radius)
    # points right at the radius may flip on float noise; compare away from it
    sure = {k for k, e in want.items() if e < radius - 1e-6}
    assert sure <= set(got) <= set(want) | {k for k in net.segments if project_on(net, p, k).err <= radius + 1e-6}
    for k in got:
        assert got[k] == pytest.approx(project_on(net, p, k).err, abs=1e-6)


CITY = datagen.gen_city(6, 6, seed=11)


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 600), st.floats(-100, 600), st.floats(5, 100), st.floats(1, 100))
def test_candidates_monotone_in_radius(x, y, r, extra):
    p = geo(x, y)
    small = {c.c for c in candidates(CITY, p, r)}
    big = {c.c for c in candidates(CITY, p, r + extra)}
    assert small <= big


# -- shortest_path -------------------------------------------------------------------

def test_same_segment_forward():
    net = line_network(200, 200)
    a = net.candidate_at("p0-p1", 20.0)
    b = net.candidate_at("p0-p1", 150.0)
    p = shortest_path(net, a, b)
    assert p.segments == ("p0-p1",) and p.length == pytest.approx(130.0)


def test_one_way_backwards_unreachable():
    net = line_network(300, 100)
    a = net.candidate_at("p1-p2", 50.0)
    assert shortest_path(net, a, net.candidate_at("p0-p1", 10.0)) is None
    assert shortest_path(net, a, net.candidate_at("p1-p2", 10.0)) is None


def test_three_by_three_grid_against_enumeration():
    xy = {f"g{r}{c}": (c * 100.0 + (7.0 if (r, c) == (1, 1) else 0.0), r * 100.0) for r in range(3) for c in range(3)}
    links = []
    for r in range(3):
        for c in range(3):
            for dr, dc in ((0, 1), (1, 0)):
                if r + dr < 3 and c + dc < 3:
                    u, v = f"g{r}{c}", f"g{r + dr}{c + dc}"
                    links += [(f"{u}-{v}", u, v), (f"{v}-{u}", v, u)]
    net = datagen.network_from_xy(xy, links)
    a = net.candidate_at("g00-g01", 0.0)
    b = net.candidate_at("g21-g22", net.segments["g21-g22"].l)
    p = shortest_path(net, a, b)
    assert p.length == pytest.approx(brute_shortest(net, a, b), abs=1e-9)
    # forced through the shifted centre node: 100 + 2 * hypot(7, 100) + 100
    assert p.length == pytest.approx(200.0 + 2 * math.hypot(7.0, 100.0), rel=1e-5)
    assert path_is_chained(net, p.segments)


def test_equal_length_ties_pick_smaller_id_sequence():
    # two 200 m routes from s to t: via "a" or via "b"
    xy = {"s": (0, 0), "a": (100, 50), "b": (100, -50), "t": (200, 0), "z": (-100, 0)}
    links = [("z-s", "z", "s"), ("s-b", "s", "b"), ("b-t", "b", "t"), ("s-a", "s", "a"), ("a-t", "a", "t"),
             ("t-u", "t", "z")]
    net = datagen.network_from_xy(xy, links)
    p = shortest_path(net, net.candidate_at("z-s", 10.0), net.candidate_at("t-u", 10.0))
    assert p.segments == ("z-s", "s-a", "a-t", "t-u")


def test_routing_oracle_random_networks():
    router_checks = 0
    for seed in range(100):
        net = random_network(seed)
        sids = sorted(net.segments)
        if not sids:
            continue
        rng = np.random.default_rng(1000 + seed)
        router = Router(net)
        for _ in range(5):
            sa, sb = (sids[int(i)] for i in rng.integers(len(sids), size=2))
            a = net.candidate_at(sa, float(rng.uniform(0, net.segments[sa].l)))
            b = net.candidate_at(sb, float(rng.uniform(0, net.segments[sb].l)))
            want = brute_shortest(net, a, b)
            got = router.route(a, b)
            if math.isinf(want):
                assert got is None
            else:
                assert got is not None and abs(got.length - want) <= 1e-9
                assert path_is_chained(net, got.segments)
                router_checks += 1
    assert router_checks > 100


def test_route_through_shared_node_obeys_triangle():
    net = datagen.gen_city(6, 6, seed=5)
    rng = np.random.default_rng(2)
    router = Router(net)
    sids = sorted(net.segments)
    for _ in range(50):
        a, b, c = (net.candidate_at(sids[int(i)], 0.0) for i in rng.integers(len(sids), size=3))
        ab, bc, ac = router.route(a, b), router.route(b, c), router.route(a, c)
        if ab and bc and ac:
            assert ac.length <= ab.length + bc.length + 0.01


# -- path helpers --------------------------------------------------------------------

def test_slice_and_join_roundtrip():
    net = line_network(600, 100)
    full = shortest_path(net, net.candidate_at("p0-p1", 30.0), net.candidate_at("p5-p6", 40.0))
    left = slice_path(net, full, 0.0, 250.0)
    right = slice_path(net, full, 250.0, full.length)
    joined = join_paths(net, left, right)
    assert joined.segments == full.segments
    assert joined.length == pytest.approx(full.length)
    assert joined.entry_offset == pytest.approx(30.0) and joined.exit_offset == pytest.approx(40.0)


def test_polyline_project_clamps():
    xy = np.array([[0.0, 0.0], [10.0, 0.0]])
    cum = np.array([0.0, 10.0])
    off, err, x, y = polyline_project(xy, cum, -5.0, 0.0)
    assert (off, err) == (0.0, 5.0)
