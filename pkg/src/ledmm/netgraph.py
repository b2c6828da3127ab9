"""Road network model: loading, planar geometry, candidate search and routing.

Coordinates are stored as lon/lat degrees and converted to planar meters with
an equirectangular approximation around a per-network reference latitude.
All geometric work (projection, lengths, routing costs) happens in meters.
"""
from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

METERS_PER_DEGREE = 111320.0
INDEX_CELL = 100.0
_TIE = 1e-9


class NetworkFormatError(ValueError):
    """Raised for malformed network files."""


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float
    t: Optional[int] = None

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if self.t is not None and self.t < 0:
            raise ValueError(f"negative timestamp {self.t}")


def distance(a: GeoPoint, b: GeoPoint, ref_lat: Optional[float] = None) -> float:
    """Equirectangular distance in meters.

    Without ``ref_lat`` the mean latitude of the two points is used, which
    keeps the function symmetric.
    """
    if ref_lat is None:
        ref_lat = 0.5 * (a.lat + b.lat)
    kx = METERS_PER_DEGREE * math.cos(math.radians(ref_lat))
    dx = (a.lon - b.lon) * kx
    dy = (a.lat - b.lat) * METERS_PER_DEGREE
    return math.hypot(dx, dy)


@dataclass(frozen=True)
class Projection:
    """Fixed-latitude equirectangular projection (degrees <-> meters)."""

    ref_lat: float = 0.0

    @property
    def kx(self) -> float:
        return METERS_PER_DEGREE * math.cos(math.radians(self.ref_lat))

    def to_xy(self, p: GeoPoint) -> Tuple[float, float]:
        return p.lon * self.kx, p.lat * METERS_PER_DEGREE

    def to_geo(self, x: float, y: float, t: Optional[int] = None) -> GeoPoint:
        return GeoPoint(float(x) / self.kx, float(y) / METERS_PER_DEGREE, t)

    def many_to_xy(self, points: Sequence[GeoPoint]) -> np.ndarray:
        arr = np.array([(p.lon, p.lat) for p in points], dtype=float).reshape(-1, 2)
        arr[:, 0] *= self.kx
        arr[:, 1] *= METERS_PER_DEGREE
        return arr


@dataclass(frozen=True)
class Segment:
    id: str
    start: str
    end: str
    v: float
    geometry: Tuple[GeoPoint, ...]
    l: float
    ref_lat: float = field(repr=False, compare=False)
    xy: np.ndarray = field(repr=False, compare=False)
    cum: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class CandidatePoint:
    position: GeoPoint
    c: str
    offset: float
    err: float


@dataclass(frozen=True)
class NetPath:
    segments: Tuple[str, ...]
    entry_offset: float
    exit_offset: float
    length: float


def polyline_project(xy: np.ndarray, cum: np.ndarray, px: float, py: float,
                     lo: float = 0.0, hi: Optional[float] = None) -> Tuple[float, float, float, float]:
    """Nearest point on a polyline, restricted to arc offsets [lo, hi].

    Returns (offset, err, x, y). Ties go to the smaller offset.
    """
    a = xy[:-1]
    d = xy[1:] - a
    seglen = np.diff(cum)
    if hi is None:
        hi = float(cum[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((px - a[:, 0]) * d[:, 0] + (py - a[:, 1]) * d[:, 1]) / (seglen * seglen)
    t = np.where(seglen > 0, t, 0.0)
    off = cum[:-1] + np.clip(t, 0.0, 1.0) * seglen
    off = np.clip(off, lo, hi)
    # map the clipped offsets back onto each piece
    tt = np.where(seglen > 0, (off - cum[:-1]) / np.where(seglen > 0, seglen, 1.0), 0.0)
    tt = np.clip(tt, 0.0, 1.0)
    qx = a[:, 0] + tt * d[:, 0]
    qy = a[:, 1] + tt * d[:, 1]
    dist = np.hypot(qx - px, qy - py)
    # pieces lying entirely outside [lo, hi] must not contribute
    valid = (cum[1:] >= lo - 1e-12) & (cum[:-1] <= hi + 1e-12)
    dist = np.where(valid, dist, np.inf)
    best = float(dist.min())
    i = int(np.flatnonzero(dist <= best + 1e-12)[0])
    return float(off[i]), best, float(qx[i]), float(qy[i])


def point_at(xy: np.ndarray, cum: np.ndarray, offset: float) -> Tuple[float, float]:
    n = len(cum)
    offset = min(max(float(offset), 0.0), float(cum[-1]))
    i = 0 if n == 2 else min(max(bisect.bisect_right(cum, offset) - 1, 0), n - 2)
    c0, c1 = float(cum[i]), float(cum[i + 1])
    x0, y0 = float(xy[i, 0]), float(xy[i, 1])
    if c1 <= c0:
        return x0, y0
    frac = (offset - c0) / (c1 - c0)
    return x0 + frac * (float(xy[i + 1, 0]) - x0), y0 + frac * (float(xy[i + 1, 1]) - y0)


class RoadNetwork:
    """Directed road graph. Treat as immutable after construction."""

    def __init__(self, nodes: Dict[str, GeoPoint], segments: Iterable[Tuple[str, str, str, float, Sequence[GeoPoint]]],
                 ref_lat: Optional[float] = None):
        self.nodes = dict(nodes)
        if ref_lat is None:
            # fsum keeps the value independent of node order (files are written sorted)
            ref_lat = math.fsum(p.lat for p in self.nodes.values()) / len(self.nodes) if self.nodes else 0.0
        self.proj = Projection(ref_lat)
        self.node_xy = {n: self.proj.to_xy(p) for n, p in self.nodes.items()}
        self.segments: Dict[str, Segment] = {}
        self.adjacency: Dict[str, List[str]] = {n: [] for n in self.nodes}
        for sid, start, end, v, inner in segments:
            if sid in self.segments:
                raise NetworkFormatError(f"duplicate segment id {sid!r}")
            for n in (start, end):
                if n not in self.nodes:
                    raise NetworkFormatError(f"dangling node reference {n!r} in segment {sid!r}")
            geom = (self.nodes[start], *inner, self.nodes[end])
            xy = self.proj.many_to_xy(geom)
            cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])
            if cum[-1] <= 0:
                raise NetworkFormatError(f"zero-length segment {sid!r}")
            self.segments[sid] = Segment(sid, start, end, float(v), tuple(geom), float(cum[-1]), ref_lat, xy, cum)
            self.adjacency[start].append(sid)
        for outs in self.adjacency.values():
            outs.sort()
        self._build_index()

    def __len__(self):
        return len(self.segments)

    def _build_index(self):
        # flat table of polyline pieces, grouped by segment, for vectorized queries
        a, d, cum0, self._piece_range = [], [], [], {}
        for sid in sorted(self.segments):
            s = self.segments[sid]
            self._piece_range[sid] = (len(a), len(a) + len(s.xy) - 1)
            a.extend(s.xy[:-1])
            d.extend(s.xy[1:] - s.xy[:-1])
            cum0.extend(s.cum[:-1])
        self._pa = np.array(a, dtype=float).reshape(-1, 2)
        self._pd = np.array(d, dtype=float).reshape(-1, 2)
        self._pcum0 = np.array(cum0, dtype=float)
        self._plen = np.hypot(self._pd[:, 0], self._pd[:, 1]) if len(d) else np.zeros(0)
        self._cells: Dict[Tuple[int, int], List[str]] = {}
        for sid in sorted(self.segments):
            xy = self.segments[sid].xy
            cells = set()
            for (x0, y0), (x1, y1) in zip(xy[:-1], xy[1:]):
                for cx in range(math.floor(min(x0, x1) / INDEX_CELL), math.floor(max(x0, x1) / INDEX_CELL) + 1):
                    for cy in range(math.floor(min(y0, y1) / INDEX_CELL), math.floor(max(y0, y1) / INDEX_CELL) + 1):
                        cells.add((cx, cy))
            for c in cells:
                self._cells.setdefault(c, []).append(sid)

    # -- geometry -----------------------------------------------------------
    def xy(self, p: GeoPoint) -> Tuple[float, float]:
        return self.proj.to_xy(p)

    def position(self, seg_id: str, offset: float) -> Tuple[float, float]:
        s = self.segments[seg_id]
        return point_at(s.xy, s.cum, offset)

    def candidate_at(self, seg_id: str, offset: float, source: Optional[GeoPoint] = None) -> CandidatePoint:
        x, y = self.position(seg_id, offset)
        err = 0.0
        if source is not None:
            sx, sy = self.xy(source)
            err = math.hypot(sx - x, sy - y)
        return CandidatePoint(self.proj.to_geo(x, y), seg_id, float(offset), err)

    def nearby_segments(self, x: float, y: float, radius: float) -> List[str]:
        ids = set()
        for cx in range(math.floor((x - radius) / INDEX_CELL), math.floor((x + radius) / INDEX_CELL) + 1):
            for cy in range(math.floor((y - radius) / INDEX_CELL), math.floor((y + radius) / INDEX_CELL) + 1):
                ids.update(self._cells.get((cx, cy), ()))
        return sorted(ids)


# -- file format --------------------------------------------------------------

def load_network(source: TextIO) -> RoadNetwork:
    """Parse the line-oriented network format (``N`` and ``S`` records)."""
    nodes: Dict[str, GeoPoint] = {}
    raw = []
    for lineno, line in enumerate(source, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "N" and len(tok) == 4:
                if tok[1] in nodes:
                    raise NetworkFormatError(f"line {lineno}: duplicate node {tok[1]!r}")
                nodes[tok[1]] = GeoPoint(float(tok[2]), float(tok[3]))
            elif tok[0] == "S" and len(tok) >= 5 and len(tok) % 2 == 1:
                coords = [float(v) for v in tok[5:]]
                inner = [GeoPoint(coords[i], coords[i + 1]) for i in range(0, len(coords), 2)]
                raw.append((tok[1], tok[2], tok[3], float(tok[4]), inner))
            else:
                raise NetworkFormatError(f"line {lineno}: malformed record {line!r}")
        except ValueError as exc:
            if isinstance(exc, NetworkFormatError):
                raise
            raise NetworkFormatError(f"line {lineno}: {exc}") from exc
    return RoadNetwork(nodes, raw)


def dump_network(net: RoadNetwork, out: TextIO) -> None:
    out.write("# ledmm road network\n")
    for n in sorted(net.nodes):
        p = net.nodes[n]
        out.write(f"N {n} {float(p.lon)!r} {float(p.lat)!r}\n")
    for sid in sorted(net.segments):
        s = net.segments[sid]
        inner = " ".join(f"{float(p.lon)!r} {float(p.lat)!r}" for p in s.geometry[1:-1])
        out.write(f"S {sid} {s.start} {s.end} {float(s.v)!r}" + (f" {inner}" if inner else "") + "\n")


# -- projection and candidate search --------------------------------------------

def project(point: GeoPoint, segment: Segment) -> CandidatePoint:
    """Closest position on ``segment`` to ``point``."""
    proj = Projection(segment.ref_lat)
    px, py = proj.to_xy(point)
    off, err, x, y = polyline_project(segment.xy, segment.cum, px, py)
    return CandidatePoint(proj.to_geo(x, y), segment.id, off, err)


def project_on(net: RoadNetwork, point: GeoPoint, seg_id: str) -> CandidatePoint:
    s = net.segments[seg_id]
    px, py = net.xy(point)
    off, err, x, y = polyline_project(s.xy, s.cum, px, py)
    return CandidatePoint(net.proj.to_geo(x, y), seg_id, off, err)


def candidates(net: RoadNetwork, point: GeoPoint, radius: float) -> List[CandidatePoint]:
    """One candidate per segment within ``radius`` meters, nearest first."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    px, py = net.xy(point)
    sids = net.nearby_segments(px, py, radius)
    if not sids:
        return []
    ranges = [net._piece_range[sid] for sid in sids]
    counts = np.array([b - a for a, b in ranges])
    idx = np.concatenate([np.arange(a, b) for a, b in ranges])
    a, d, ln = net._pa[idx], net._pd[idx], net._plen[idx]
    safe = np.where(ln > 0, ln, 1.0)
    t = ((px - a[:, 0]) * d[:, 0] + (py - a[:, 1]) * d[:, 1]) / (safe * safe)
    t = np.clip(np.where(ln > 0, t, 0.0), 0.0, 1.0)
    qx = a[:, 0] + t * d[:, 0]
    qy = a[:, 1] + t * d[:, 1]
    dist = np.hypot(qx - px, qy - py)
    heads = np.concatenate([[0], np.cumsum(counts)[:-1]])
    mins = np.minimum.reduceat(dist, heads)
    # ties within a segment go to the piece with the smaller offset
    pos = np.where(dist <= np.repeat(mins, counts) + 1e-12, np.arange(len(idx)), len(idx))
    best = np.minimum.reduceat(pos, heads)
    out = []
    for sid, k in zip(sids, best):
        err = float(dist[k])
        if err <= radius:
            off = float(net._pcum0[idx[k]] + t[k] * ln[k])
            out.append(CandidatePoint(net.proj.to_geo(float(qx[k]), float(qy[k])), sid, off, err))
    out.sort(key=lambda c: (c.err, c.c))
    return out


# -- routing ------------------------------------------------------------------

def _dijkstra(net: RoadNetwork, source: CandidatePoint) -> Tuple[Dict[str, float], Dict[str, str]]:
    """Node distances from a point on a segment; the first hop is the rest of that segment.

    Equal-length alternatives resolve to the lexicographically smaller
    segment-id sequence.
    """
    first = net.segments[source.c]
    dist = {first.end: first.l - source.offset}
    pred = {first.end: first.id}
    heap = [(dist[first.end], first.end)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for sid in net.adjacency[u]:
            s = net.segments[sid]
            nd = d + s.l
            v = s.end
            old = dist.get(v)
            if old is None or nd < old - _TIE:
                dist[v] = nd
                pred[v] = sid
                heapq.heappush(heap, (nd, v))
            elif abs(nd - old) <= _TIE and v not in done and v != first.end:
                if _path_of(net, pred, first, u) + [sid] < _path_of(net, pred, first, v):
                    pred[v] = sid
    return dist, pred


def _path_of(net: RoadNetwork, pred: Dict[str, str], first: Segment, node: str) -> List[str]:
    out = []
    guard = len(net.segments) + 2
    while True:
        sid = pred[node]
        out.append(sid)
        if node == first.end and sid == first.id:
            break
        node = net.segments[sid].start
        guard -= 1
        if guard < 0:
            raise RuntimeError("predecessor cycle")
    out.reverse()
    return out


class Router:
    """Caches one-to-many shortest-path trees keyed by source candidate."""

    def __init__(self, net: RoadNetwork):
        self.net = net
        self._trees: Dict[Tuple[str, float], Tuple[Dict[str, float], Dict[str, str]]] = {}

    def _tree(self, source: CandidatePoint):
        key = (source.c, source.offset)
        tree = self._trees.get(key)
        if tree is None:
            tree = _dijkstra(self.net, source)
            self._trees[key] = tree
        return tree

    def route(self, a: CandidatePoint, b: CandidatePoint) -> Optional[NetPath]:
        net = self.net
        first = net.segments[a.c]
        best: Optional[Tuple[float, List[str]]] = None
        if a.c == b.c and b.offset >= a.offset:
            best = (b.offset - a.offset, [a.c])
        dist, pred = self._tree(a)
        target = net.segments[b.c]
        if target.start in dist:
            cand = (dist[target.start] + b.offset, _path_of(net, pred, first, target.start) + [b.c])
            if best is None or cand[0] < best[0] - _TIE or (abs(cand[0] - best[0]) <= _TIE and cand[1] < best[1]):
                best = cand
        if best is None:
            return None
        return NetPath(tuple(best[1]), a.offset, b.offset, max(best[0], 0.0))


def shortest_path(net: RoadNetwork, a: CandidatePoint, b: CandidatePoint) -> Optional[NetPath]:
    """Minimum-length directed path between two on-segment points, or None."""
    return Router(net).route(a, b)


# -- path geometry ----------------------------------------------------------------

def path_geometry(net: RoadNetwork, path: NetPath) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Planar polyline of the traversed portion of ``path``.

    Returns (xy, cum, starts) where ``starts[i]`` is the path offset at which
    the i-th segment's traversed portion begins.
    """
    pts = []
    starts = []
    total = 0.0
    n = len(path.segments)
    for i, sid in enumerate(path.segments):
        s = net.segments[sid]
        lo = path.entry_offset if i == 0 else 0.0
        hi = path.exit_offset if i == n - 1 else s.l
        starts.append(total)
        inner = (s.cum > lo) & (s.cum < hi)
        piece = [point_at(s.xy, s.cum, lo), *map(tuple, s.xy[inner]), point_at(s.xy, s.cum, hi)]
        if pts:
            piece = piece[1:]
        pts.extend(piece)
        total += hi - lo
    xy = np.array(pts, dtype=float)
    if len(xy) == 1:
        xy = np.vstack([xy, xy])
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])
    return xy, cum, np.array(starts)


def locate(path: NetPath, starts: np.ndarray, net: RoadNetwork, path_offset: float) -> Tuple[int, str, float]:
    """Map a path offset to (segment index, segment id, offset on segment)."""
    i = int(np.searchsorted(starts, path_offset, side="right") - 1)
    i = min(max(i, 0), len(path.segments) - 1)
    base = path.entry_offset if i == 0 else 0.0
    seg = net.segments[path.segments[i]]
    return i, seg.id, float(min(max(base + path_offset - starts[i], 0.0), seg.l))


def slice_path(net: RoadNetwork, path: NetPath, lo: float, hi: float) -> NetPath:
    """Sub-path between two path offsets."""
    _, _, starts = path_geometry(net, path)
    i, _, a = locate(path, starts, net, lo)
    j, _, b = locate(path, starts, net, hi)
    # an offset exactly on a segment boundary belongs to the later segment for
    # ``lo`` and the earlier segment for ``hi``
    if j > i and b <= 0.0 and hi > lo:
        j -= 1
        b = net.segments[path.segments[j]].l
    if i < j and a >= net.segments[path.segments[i]].l:
        i += 1
        a = 0.0
    segs = path.segments[i:j + 1]
    return NetPath(tuple(segs), float(a), float(b), float(max(hi - lo, 0.0)))


def join_paths(net: RoadNetwork, first: NetPath, second: NetPath) -> NetPath:
    """Concatenate two paths where ``second`` starts where ``first`` ends."""
    # drop empty boundary pieces so paths meeting at a node chain cleanly
    if len(first.segments) > 1 and first.exit_offset <= 1e-9:
        prev = net.segments[first.segments[-2]]
        first = NetPath(first.segments[:-1], first.entry_offset, prev.l, first.length)
    if len(second.segments) > 1 and second.entry_offset >= net.segments[second.segments[0]].l - 1e-9:
        second = NetPath(second.segments[1:], 0.0, second.exit_offset, second.length)
    if first.segments[-1] == second.segments[0] and abs(first.exit_offset - second.entry_offset) < 1e-6:
        segs = first.segments + second.segments[1:]
    else:
        a = net.segments[first.segments[-1]]
        b = net.segments[second.segments[0]]
        if a.end != b.start:
            raise ValueError(f"paths do not chain: {a.id} -> {b.id}")
        segs = first.segments + second.segments
    return NetPath(segs, first.entry_offset, second.exit_offset, first.length + second.length)


def path_is_chained(net: RoadNetwork, segs: Sequence[str]) -> bool:
    return all(net.segments[a].end == net.segments[b].start for a, b in zip(segs[:-1], segs[1:]))
