"""Synthetic cities, bus routes, noisy trajectories and fixtures.

Every generator is a pure function of its arguments and seed. Independent
sub-seeds come from ``derive_seed(master, stream, index)``, which feeds
``numpy.random.SeedSequence([master, stream, index])``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .ledmap.fitting import ErrorDistribution
from .ledmap.grid import GridSpec, cell_of, grid_for_network
from .ledmap.model import LedModel
from .ledmap.histograms import DEFAULT_EDGES, distances_to_polyline
from .netgraph import (GeoPoint, NetPath, Projection, RoadNetwork, Router, candidates, join_paths, locate, path_geometry,
                       slice_path)
from .trajectory import Trajectory, TruthEntry

ORIGIN = (114.05, 22.53)
STREAMS = {"city": 1, "routes": 2, "bus": 3, "trips": 4, "noise": 5, "downsample": 6, "detour": 7}


def derive_seed(master: int, stream: str, index: int = 0) -> int:
    ss = np.random.SeedSequence([int(master), STREAMS[stream], int(index)])
    return int(ss.generate_state(1)[0])


# -- networks ------------------------------------------------------------------

def _strongly_connected(net: RoadNetwork) -> bool:
    if not net.nodes:
        return True
    rev: Dict[str, List[str]] = {n: [] for n in net.nodes}
    for s in net.segments.values():
        rev[s.end].append(s.start)
    start = min(net.nodes)

    def reach(adj):
        seen, stack = {start}, [start]
        while stack:
            u = stack.pop()
            for v in adj(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    fwd = reach(lambda u: [net.segments[s].end for s in net.adjacency[u]])
    bwd = reach(lambda u: rev[u])
    return len(fwd) == len(bwd) == len(net.nodes)


def network_from_xy(nodes_xy: Dict[str, Tuple[float, float]], links: Sequence[Tuple[str, str, str]],
                    speed: float = 13.9, origin: Tuple[float, float] = ORIGIN) -> RoadNetwork:
    """Build a network from planar node positions (meters east/north of ``origin``)."""
    proj = Projection(origin[1])
    x0, y0 = proj.to_xy(GeoPoint(*origin))
    nodes = {n: proj.to_geo(x0 + x, y0 + y) for n, (x, y) in nodes_xy.items()}
    return RoadNetwork(nodes, [(sid, a, b, speed, []) for sid, a, b in links])


def gen_city(cols: int, rows: int, spacing: float = 100.0, seed: int = 0, oneway_frac: float = 0.1,
             remove_frac: float = 0.05, jitter: bool = True, origin: Tuple[float, float] = ORIGIN) -> RoadNetwork:
    """Jittered grid of two-way streets with some one-way and missing blocks.

    Retries (up to 10 draws) until the result is strongly connected.
    """
    if cols < 2 or rows < 2:
        raise ValueError("cols and rows must be >= 2")
    rng = np.random.default_rng(seed)
    for _ in range(10):
        xy = {}
        for r in range(rows):
            for c in range(cols):
                dx = dy = 0.0
                if jitter:
                    rad = rng.uniform(0, spacing / 10)
                    ang = rng.uniform(0, 2 * math.pi)
                    dx, dy = rad * math.cos(ang), rad * math.sin(ang)
                xy[f"n{r}_{c}"] = (c * spacing + dx, r * spacing + dy)
        links = []
        for r in range(rows):
            for c in range(cols):
                here = f"n{r}_{c}"
                for nb in ([f"n{r}_{c + 1}"] if c + 1 < cols else []) + ([f"n{r + 1}_{c}"] if r + 1 < rows else []):
                    u = rng.random()
                    if u < remove_frac:
                        continue
                    if u < remove_frac + oneway_frac:
                        a, b = (here, nb) if rng.random() < 0.5 else (nb, here)
                        links.append((f"{a}-{b}", a, b))
                    else:
                        links.append((f"{here}-{nb}", here, nb))
                        links.append((f"{nb}-{here}", nb, here))
        net = network_from_xy(xy, links, origin=origin)
        if _strongly_connected(net):
            return net
    raise RuntimeError("could not generate a strongly connected city in 10 attempts")


# -- routes and trips ------------------------------------------------------------

class Routes(dict):
    """route id -> NetPath, with the covered-cell fraction achieved."""

    coverage: float = 0.0


def road_cells(net: RoadNetwork, grid: GridSpec, step: float = 5.0) -> set:
    cells = set()
    for sid in net.segments:
        cells |= _path_cells(net, NetPath((sid,), 0.0, net.segments[sid].l, net.segments[sid].l), grid, step)
    return cells


def _path_cells(net: RoadNetwork, path: NetPath, grid: GridSpec, step: float = 5.0) -> set:
    xy, cum, _ = path_geometry(net, path)
    offs = np.arange(0.0, cum[-1] + step, step)
    xs = np.interp(offs, cum, xy[:, 0])
    ys = np.interp(offs, cum, xy[:, 1])
    lon = xs / net.proj.kx
    lat = ys / 111320.0
    cells = grid.cells_of(lon, lat)
    return set(int(c) for c in cells if c >= 0)


def _random_simple_path(net: RoadNetwork, rng: np.random.Generator, min_len: float, tries: int = 200) -> NetPath:
    nodes = sorted(net.nodes)
    for _ in range(tries):
        u = nodes[rng.integers(len(nodes))]
        seen = {u}
        segs: List[str] = []
        length = 0.0
        while length < min_len:
            outs = [s for s in net.adjacency[u] if net.segments[s].end not in seen]
            if not outs:
                break
            sid = outs[rng.integers(len(outs))]
            segs.append(sid)
            length += net.segments[sid].l
            u = net.segments[sid].end
            seen.add(u)
        if segs and length >= min_len:
            return NetPath(tuple(segs), 0.0, net.segments[segs[-1]].l, length)
    raise ValueError(f"no simple path of length >= {min_len} m found")


def gen_routes(net: RoadNetwork, count: int, min_len: float, seed: int = 0, grid: Optional[GridSpec] = None,
               coverage_goal: float = 0.7, attempts: int = 100) -> Routes:
    """Random simple paths used as fixed (bus) routes.

    Draws whole route sets until the covered fraction of road cells reaches
    ``coverage_goal``; otherwise returns the best set seen.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    grid = grid or grid_for_network(net, 100.0, 50.0)
    total = road_cells(net, grid) or {0}
    rng = np.random.default_rng(seed)
    best: Optional[Routes] = None
    for _ in range(attempts):
        routes = Routes()
        covered: set = set()
        for k in range(count):
            p = _random_simple_path(net, rng, min_len)
            routes[f"r{k:03d}"] = p
            covered |= _path_cells(net, p, grid)
        routes.coverage = len(covered & total) / len(total)
        if best is None or routes.coverage > best.coverage:
            best = routes
        if routes.coverage >= coverage_goal:
            break
    return best


def random_point(net: RoadNetwork, rng: np.random.Generator):
    sids = sorted(net.segments)
    sid = sids[rng.integers(len(sids))]
    s = net.segments[sid]
    return net.candidate_at(sid, float(rng.uniform(0.1, 0.9) * s.l))


def _is_simple(net: RoadNetwork, path: NetPath) -> bool:
    segs = [net.segments[sid] for sid in path.segments]
    nodes = [segs[0].start] + [s.end for s in segs]
    return len(set(nodes)) == len(nodes)


def _twins(net: RoadNetwork, c):
    """All directed positions at the physical location of ``c`` (both carriageways of a two-way road)."""
    out = [t for t in candidates(net, c.position, 0.01) if t.err <= 1e-6]
    return out or [c]


def _shortest_leg(net: RoadNetwork, router: Router, a, b, so_far: Optional[NetPath]) -> Optional[NetPath]:
    # a vehicle heads for a place, not a carriageway: take the shortest route
    # over every direction pairing (the start is fixed once the trip is under way)
    starts = [a] if so_far is not None else _twins(net, a)
    best = None
    for s in starts:
        for e in _twins(net, b):
            leg = router.route(s, e)
            if leg is not None and leg.length > 0 and (best is None or (leg.length, leg.segments) < (best.length, best.segments)):
                best = leg
    return best


def gen_trip(net: RoadNetwork, seed: int, legs: int = 1, min_len: float = 600.0, tries: int = 1000) -> NetPath:
    """Vehicle path: shortest paths chained through ``legs - 1`` random waypoints.

    Draws are rejected unless the combined path is simple (touches every
    node, including both end nodes of its partial end segments, at most once),
    which rules out U-turns at the waypoints.
    """
    rng = np.random.default_rng(seed)
    router = Router(net)
    for _ in range(tries):
        pts = [random_point(net, rng) for _ in range(legs + 1)]
        path = None
        for k in range(legs):
            leg = _shortest_leg(net, router, pts[k], pts[k + 1], path)
            if leg is None or leg.length <= 0:
                path = None
                break
            pts[k + 1] = net.candidate_at(leg.segments[-1], leg.exit_offset)
            path = leg if path is None else join_paths(net, path, leg)
        if path is not None and path.length >= min_len and _is_simple(net, path):
            return path
    raise ValueError(f"no simple trip of length >= {min_len} m found")


# -- noise -------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseRegime:
    """Error-magnitude law applied inside a set of grid cells (everywhere if ``cells`` is None).

    kind is one of gaussian (mu, sigma), exponential (rate,), lognormal
    (shape, scale), mixture (w.., mu.., sigma..) or none.
    """

    kind: str
    params: Tuple[float, ...] = ()
    grid: Optional[GridSpec] = None
    cells: Optional[FrozenSet[int]] = None

    def __post_init__(self):
        if self.kind != "none":
            ErrorDistribution(self.kind, tuple(self.params))

    def covers(self, p: GeoPoint) -> bool:
        return self.cells is None or cell_of(self.grid, p) in self.cells

    def sample(self, rng: np.random.Generator) -> float:
        k, p = self.kind, self.params
        if k == "none":
            return 0.0
        if k == "exponential":
            return float(rng.exponential(1.0 / p[0]))
        if k == "lognormal":
            return float(rng.lognormal(math.log(p[1]), p[0]))
        if k == "gaussian":
            mu, sig = p
        else:
            m = len(p) // 3
            j = int(rng.choice(m, p=np.asarray(p[:m]) / sum(p[:m])))
            mu, sig = p[m + j], p[2 * m + j]
        while True:
            v = rng.normal(mu, sig)
            if v >= 0:
                return float(v)


def regime_at(regimes: Sequence[NoiseRegime], p: GeoPoint) -> NoiseRegime:
    for r in regimes:
        if r.covers(p):
            return r
    return NoiseRegime("none")


def gen_trajectory(net: RoadNetwork, path: NetPath, regimes: Sequence[NoiseRegime], interval_s: int = 5,
                   speed_mps: float = 10.0, seed: int = 0, traj_id: str = "t0", t0: int = 0,
                   direction: str = "cross") -> Tuple[Trajectory, TruthEntry]:
    """Sample true positions every ``interval_s`` seconds and displace them.

    The displacement magnitude comes from the regime of the true position.
    ``direction="cross"`` displaces perpendicular to the road, on a random
    side unless only one side keeps the distance to the path equal to the
    drawn magnitude; ``"isotropic"`` uses a uniform random bearing.
    """
    if interval_s < 1 or speed_mps <= 0:
        raise ValueError("interval_s must be >= 1 and speed positive")
    rng = np.random.default_rng(seed)
    xy, cum, starts = path_geometry(net, path)
    step = speed_mps * interval_s
    offs = np.arange(0.0, cum[-1] + 1e-9, step)
    if len(offs) < 2:
        offs = np.array([0.0, cum[-1]])
    points, positions = [], []
    for k, off in enumerate(offs):
        off = float(min(off, cum[-1]))
        x = float(np.interp(off, cum, xy[:, 0]))
        y = float(np.interp(off, cum, xy[:, 1]))
        true = net.proj.to_geo(x, y)
        mag = regime_at(regimes, true).sample(rng)
        if direction == "cross":
            i = min(max(int(np.searchsorted(cum, off, side="right")) - 1, 0), len(cum) - 2)
            # skip zero-length pieces when picking the local direction
            while cum[i + 1] - cum[i] <= 0 and i > 0:
                i -= 1
            tx, ty = xy[i + 1] - xy[i]
            norm = math.hypot(tx, ty) or 1.0
            side = 1.0 if rng.random() < 0.5 else -1.0
            nx, ny = -ty / norm, tx / norm
            # near a turn, the inner side can lie closer to the next leg; use
            # the outer side there so the distance to the path stays ``mag``
            if mag > 0:
                trial = np.array([[x + mag * nx * side, y + mag * ny * side]])
                if abs(float(distances_to_polyline(xy, trial)[0]) - mag) > 1e-6 * max(1.0, mag):
                    flip = np.array([[x - mag * nx * side, y - mag * ny * side]])
                    if abs(float(distances_to_polyline(xy, flip)[0]) - mag) <= 1e-6 * max(1.0, mag):
                        side = -side
            dx, dy = nx * side, ny * side
        else:
            ang = rng.uniform(0, 2 * math.pi)
            dx, dy = math.cos(ang), math.sin(ang)
        points.append(net.proj.to_geo(x + mag * dx, y + mag * dy, t0 + k * interval_s))
        _, sid, soff = locate(path, starts, net, off)
        positions.append((sid, soff))
    truth_path = slice_path(net, path, 0.0, float(min(offs[-1], cum[-1])))
    return Trajectory(traj_id, points), TruthEntry(truth_path, tuple(positions))


def downsample(traj: Trajectory, target_interval_s: float, seed: int = 0,
               truth: Optional[TruthEntry] = None):
    """Keep points roughly ``target_interval_s`` apart (gap jitter +-20%), always both ends.

    Returns the thinned trajectory, or (trajectory, truth) when ``truth`` is given.
    """
    ts = [p.t for p in traj.points]
    base = float(np.median(np.diff(ts))) if len(ts) > 1 else 0.0
    keep = list(range(len(ts)))
    if len(ts) > 2 and target_interval_s > base:
        rng = np.random.default_rng(seed)
        keep = [0]
        nxt = ts[0] + target_interval_s * rng.uniform(0.8, 1.2)
        for i in range(1, len(ts) - 1):
            if ts[i] >= nxt:
                keep.append(i)
                nxt = ts[i] + target_interval_s * rng.uniform(0.8, 1.2)
        keep.append(len(ts) - 1)
    out = Trajectory(traj.id, [traj.points[i] for i in keep])
    if truth is None:
        return out
    return out, TruthEntry(truth.path, tuple(truth.positions[i] for i in keep))


# -- fixtures ----------------------------------------------------------------------

class DetourFixture(NamedTuple):
    net: RoadNetwork
    path: NetPath
    trajectory: Trajectory
    truth: TruthEntry
    detour_segments: Tuple[str, ...]


DETOUR_HEIGHT = 48.0
DETOUR_WIDTH = 100.0


def detour_network(detours: int = 1) -> Tuple[RoadNetwork, NetPath, Tuple[str, ...]]:
    """Eastbound main road with ``detours`` around-the-block loops north of it.

    Each loop leaves the main road at B, runs 48 m north, 100 m east and back
    down to C; the direct B->C link is shorter by 96 m.
    """
    xy = {"A": (0.0, 0.0)}
    links = []
    truth = []
    loop_segs = []
    prev = "A"
    x = 300.0
    for i in range(1, detours + 1):
        b, c, n1, n2 = f"B{i}", f"C{i}", f"N{i}a", f"N{i}b"
        xy[b] = (x, 0.0)
        xy[c] = (x + DETOUR_WIDTH, 0.0)
        xy[n1] = (x, DETOUR_HEIGHT)
        xy[n2] = (x + DETOUR_WIDTH, DETOUR_HEIGHT)
        links += [(f"{prev}-{b}", prev, b), (f"{b}-{c}", b, c), (f"{b}-{n1}", b, n1),
                  (f"{n1}-{n2}", n1, n2), (f"{n2}-{c}", n2, c)]
        truth += [f"{prev}-{b}", f"{b}-{n1}", f"{n1}-{n2}", f"{n2}-{c}"]
        loop_segs += [f"{b}-{n1}", f"{n1}-{n2}", f"{n2}-{c}"]
        prev = c
        x += DETOUR_WIDTH + 300.0
    xy["D"] = (x + 240.0, 0.0)
    links.append((f"{prev}-D", prev, "D"))
    truth.append(f"{prev}-D")
    net = network_from_xy(xy, links)
    path = NetPath(tuple(truth), 0.0, net.segments[truth[-1]].l, sum(net.segments[s].l for s in truth))
    return net, path, tuple(loop_segs)


def gen_detour_fixture(seed: int = 0, detours: int = 1, sigma: float = 5.0, interval_s: int = 2,
                       speed_mps: float = 10.0) -> DetourFixture:
    """Trajectory along a locally non-shortest (detouring) path with cross-track Gaussian noise."""
    net, path, loop = detour_network(detours)
    regimes = [NoiseRegime("gaussian", (0.0, sigma))] if sigma > 0 else [NoiseRegime("none")]
    traj, truth = gen_trajectory(net, path, regimes, interval_s, speed_mps, seed, traj_id=f"detour{seed}")
    return DetourFixture(net, truth.path, traj, truth, loop)


def uniform_led(net: RoadNetwork, dist: ErrorDistribution, cell_size: float = 100.0) -> LedModel:
    """LED model with no sub-regions: every query uses ``dist``."""
    grid = grid_for_network(net, cell_size, 50.0)
    return LedModel(grid, np.full(grid.n_cells, -1, dtype=int), {}, 0, 1.0, dist)


class ParallelFixture(NamedTuple):
    net: RoadNetwork
    led: LedModel
    trajectory: Trajectory
    truth: TruthEntry
    true_road: Tuple[str, ...]
    alt_road: Tuple[str, ...]


def parallel_roads_fixture(offset_m: float = 24.0, gap_m: float = 40.0, length_m: float = 600.0,
                           spacing_m: float = 50.0) -> ParallelFixture:
    """Two parallel eastbound roads in different error regimes.

    The true road (y=0) lies in a high-error band (Gaussian sigma 15 m); the
    alternative road (y=gap_m) lies in a low-error band (sigma 3 m). GPS
    points sit ``offset_m`` north of the true road, i.e. nearer the
    alternative road.
    """
    n = int(length_m // 100)
    xy = {}
    links = []
    for road, y in (("T", 0.0), ("L", gap_m)):
        for i in range(n + 1):
            xy[f"{road}{i}"] = (i * 100.0, y)
        for i in range(n):
            links.append((f"{road}{i}-{road}{i + 1}", f"{road}{i}", f"{road}{i + 1}"))
    # connectors so mixed start/end pairs stay routable
    links += [("T0-L0", "T0", "L0"), ("L0-T0", "L0", "T0"),
              (f"T{n}-L{n}", f"T{n}", f"L{n}"), (f"L{n}-T{n}", f"L{n}", f"T{n}")]
    net = network_from_xy(xy, links)
    true_road = tuple(f"T{i}-T{i + 1}" for i in range(n))
    alt_road = tuple(f"L{i}-L{i + 1}" for i in range(n))
    # rows of 25 m: rows at or below the band edge belong to the high-error region
    cell = 25.0
    grid = grid_for_network(net, cell, 2 * cell)
    labels = np.full(grid.n_cells, -1, dtype=int)
    x0, y0 = grid.offsets(net.nodes["T0"].lon, net.nodes["T0"].lat)
    for idx in range(grid.n_cells):
        c, r = grid.col_row(idx)
        yc = (r + 0.5) * cell - float(y0)
        labels[idx] = 0 if yc < gap_m - cell / 2 else 1
    high = ErrorDistribution("gaussian", (0.0, 15.0))
    low = ErrorDistribution("gaussian", (0.0, 3.0))
    led = LedModel(grid, labels, {0: high, 1: low}, 2, 1.0, high, DEFAULT_EDGES, 15.0, 150.0)
    pts, positions = [], []
    k = 0
    for x in np.arange(10.0, length_m - 10.0 + 1e-9, spacing_m):
        pos = net.proj.to_xy(net.nodes["T0"])
        pts.append(net.proj.to_geo(pos[0] + x, pos[1] + offset_m, k * 5))
        seg = min(int(x // 100), n - 1)
        positions.append((true_road[seg], float(x - seg * 100.0)))
        k += 1
    a, b = positions[0], positions[-1]
    ia = true_road.index(a[0])
    ib = true_road.index(b[0])
    segs = true_road[ia:ib + 1]
    path = NetPath(segs, a[1], b[1], (ib - ia) * 100.0 + b[1] - a[1])
    return ParallelFixture(net, led, Trajectory("parallel", pts), TruthEntry(path, tuple(positions)),
                           true_road, alt_road)


# -- datasets ------------------------------------------------------------------------

@dataclass
class Dataset:
    net: RoadNetwork
    grid: GridSpec
    routes: Dict[str, NetPath]
    bus: List[Tuple[str, Trajectory]]
    trips: Dict[str, Tuple[Trajectory, TruthEntry]]
    regimes: List[NoiseRegime] = field(default_factory=list)
    trip_paths: Dict[str, NetPath] = field(default_factory=dict)


def two_regime_split(grid: GridSpec, net: RoadNetwork, west: Tuple[str, Tuple[float, ...]],
                     east: Tuple[str, Tuple[float, ...]], split_x: Optional[float] = None) -> List[NoiseRegime]:
    """West/east regimes split at planar x ``split_x`` (default: mid-way across the nodes), by cell centre."""
    xs = [xy[0] for xy in net.node_xy.values()]
    if split_x is None:
        split_x = 0.5 * (min(xs) + max(xs))
    gx0 = grid.origin.lon * grid.kx
    west_cells = frozenset(i for i in range(grid.n_cells)
                           if gx0 + (grid.col_row(i)[0] + 0.5) * grid.cell_size < split_x)
    east_cells = frozenset(range(grid.n_cells)) - west_cells
    return [NoiseRegime(west[0], tuple(west[1]), grid, west_cells),
            NoiseRegime(east[0], tuple(east[1]), grid, east_cells)]


def make_dataset(seed: int = 0, cols: int = 10, rows: int = 10, spacing: float = 100.0,
                 regimes: Optional[Sequence[Tuple[str, Tuple[float, ...]]]] = (("gaussian", (0.0, 3.0)),
                                                                               ("gaussian", (0.0, 15.0))),
                 n_routes: int = 20, route_len: float = 1500.0, bus_per_route: int = 10, bus_interval_s: int = 5,
                 n_trips: int = 30, trip_legs: int = 3, trip_min_len: float = 1200.0, trip_interval_s: int = 5,
                 trip_noise: bool = True, speed_mps: float = 10.0) -> Dataset:
    """Synthetic city with planted west/east error regimes, bus routes/trajectories and vehicle trips.

    ``regimes=None`` gives noiseless data everywhere.
    """
    net = gen_city(cols, rows, spacing, derive_seed(seed, "city"))
    grid = grid_for_network(net, 100.0, 50.0)
    if regimes is None:
        planted = [NoiseRegime("none")]
    else:
        planted = two_regime_split(grid, net, regimes[0], regimes[1])
    routes = gen_routes(net, n_routes, route_len, derive_seed(seed, "routes"), grid)
    bus = []
    k = 0
    for rid in sorted(routes):
        for j in range(bus_per_route):
            traj, _ = gen_trajectory(net, routes[rid], planted, bus_interval_s, speed_mps,
                                     derive_seed(seed, "bus", k), traj_id=f"bus{k:04d}")
            bus.append((rid, traj))
            k += 1
    trips = {}
    paths = {}
    trip_regimes = planted if trip_noise else [NoiseRegime("none")]
    for i in range(n_trips):
        tid = f"trip{i:04d}"
        p = gen_trip(net, derive_seed(seed, "trips", i), trip_legs, trip_min_len)
        traj, truth = gen_trajectory(net, p, trip_regimes, trip_interval_s, speed_mps,
                                     derive_seed(seed, "noise", i), traj_id=tid)
        trips[tid] = (traj, truth)
        paths[tid] = p
    return Dataset(net, grid, dict(routes), bus, trips, planted, paths)
