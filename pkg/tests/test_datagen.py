import math

import numpy as np
import pytest

from ledmm import datagen
from ledmm.netgraph import NetPath, Router, path_geometry, path_is_chained
from ledmm.trajectory import Trajectory

from conftest import geo, line_network


def test_two_by_two_grid_has_eight_segments():
    net = datagen.gen_city(2, 2, oneway_frac=0.0, remove_frac=0.0)
    assert len(net.nodes) == 4 and len(net.segments) == 8
    with pytest.raises(ValueError):
        datagen.gen_city(1, 5)


@pytest.mark.parametrize("seed", range(5))
def test_city_strongly_connected(seed):
    net = datagen.gen_city(8, 6, seed=seed)
    router = Router(net)
    nodes = sorted(net.nodes)
    # reaching every segment from one node and back implies strong connectivity
    first = next(s for s in net.segments.values() if s.start == nodes[0])
    for s in net.segments.values():
        a = net.candidate_at(first.id, 0.0)
        b = net.candidate_at(s.id, s.l)
        assert router.route(a, b) is not None
        assert router.route(net.candidate_at(s.id, 0.0), net.candidate_at(first.id, first.l)) is not None


def test_derive_seed_streams_differ():
    seeds = {datagen.derive_seed(0, s, i) for s in datagen.STREAMS for i in range(3)}
    assert len(seeds) == 3 * len(datagen.STREAMS)
    assert datagen.derive_seed(4, "bus", 2) == datagen.derive_seed(4, "bus", 2)


def small_dataset(seed):
    return datagen.make_dataset(seed, cols=5, rows=5, n_routes=4, route_len=600, bus_per_route=2,
                                n_trips=3, trip_legs=2, trip_min_len=500)


def test_dataset_deterministic():
    a, b = small_dataset(11), small_dataset(11)
    assert a.routes == b.routes
    assert [t for _, t in a.bus] == [t for _, t in b.bus]
    assert a.trips == b.trips
    assert small_dataset(12).trips != a.trips


def test_route_coverage(planted):
    ds, _ = planted
    total = datagen.road_cells(ds.net, ds.grid)
    covered = set()
    for p in ds.routes.values():
        covered |= datagen._path_cells(ds.net, p, ds.grid)
    assert len(covered & total) / len(total) >= 0.7


def test_cross_track_noise_magnitude():
    net = line_network(20_000, 1000)
    path = NetPath(tuple(f"p{i}-p{i + 1}" for i in range(20)), 0.0, 1000.0, 20_000.0)
    traj, truth = datagen.gen_trajectory(net, path, [datagen.NoiseRegime("gaussian", (0.0, 5.0))],
                                         interval_s=1, speed_mps=10.0, seed=0)
    P = net.proj.many_to_xy(traj.points)
    y0 = net.proj.to_xy(net.nodes["p0"])[1]
    d = np.abs(P[:, 1] - y0)
    # half-normal mean sigma * sqrt(2 / pi)
    assert d.mean() == pytest.approx(5.0 * math.sqrt(2 / math.pi), abs=0.15)
    assert len(traj) == 2001


def test_noise_free_points_sit_on_truth():
    net = datagen.gen_city(4, 4, seed=2)
    path = datagen.gen_trip(net, 2, legs=2, min_len=400)
    traj, truth = datagen.gen_trajectory(net, path, [datagen.NoiseRegime("none")], interval_s=3, seed=0)
    assert path_is_chained(net, truth.path.segments)
    for p, (sid, off) in zip(traj.points, truth.positions):
        q = net.candidate_at(sid, off).position
        x0, y0 = net.proj.to_xy(p)
        x1, y1 = net.proj.to_xy(q)
        assert math.hypot(x0 - x1, y0 - y1) < 1e-6
    order = [truth.path.segments.index(sid) for sid, _ in truth.positions]
    assert order == sorted(order)
    assert [p.t for p in traj.points] == list(range(0, 3 * len(traj), 3))


def test_trips_are_simple():
    net = datagen.gen_city(6, 6, seed=4)
    for s in range(10):
        p = datagen.gen_trip(net, s, legs=3, min_len=800)
        assert datagen._is_simple(net, p) and p.length >= 800
        assert path_is_chained(net, p.segments)


def test_downsample_counts():
    pts = [geo(10.0 * i, 0.0, 5 * i) for i in range(300)]
    thin = datagen.downsample(Trajectory("d", pts), 60, seed=0)
    assert 22 <= len(thin) <= 30
    assert thin.points[0] == pts[0] and thin.points[-1] == pts[-1]
    gaps = np.diff([p.t for p in thin.points[:-1]])
    assert gaps.min() >= 0.8 * 60 - 5 and gaps.max() <= 1.2 * 60 + 5
    same = datagen.downsample(Trajectory("d", pts), 5, seed=0)
    assert same.points == tuple(pts)


def test_detour_fixture_geometry():
    f = datagen.gen_detour_fixture(0, sigma=0.0)
    net = f.net
    router = Router(net)
    a = net.candidate_at(f.path.segments[0], 0.0)
    b = net.candidate_at(f.path.segments[-1], f.path.exit_offset)
    direct = router.route(a, b)
    assert "B1-C1" in direct.segments
    extra = f.path.length - direct.length
    assert extra == pytest.approx(2 * datagen.DETOUR_HEIGHT, rel=1e-4)
    assert 0 < extra < 100
    assert set(f.detour_segments) <= set(f.truth.path.segments)
