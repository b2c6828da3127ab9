"""Sliding-window offline map matching driven by a local error-distribution model.

The trajectory is cut into overlapping windows measured in meters. For each
window, candidate road points near the first and last GPS points are paired,
joined by shortest paths, and each path is scored by summing the tail
plausibility of every window point's distance to it. Scores accumulate
along retained predecessor paths, and the best chain is recovered at the end
by following back-references.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .netgraph import (CandidatePoint, GeoPoint, NetPath, RoadNetwork, Router, candidates, join_paths,
                       locate, path_geometry, polyline_project, slice_path)
from .nsp import NspParams, depth_bound, detect, path_chords, repair
from .trajectory import Trajectory

log = logging.getLogger(__name__)

_EPS = 1e-6


class WindowFailure(RuntimeError):
    """No (start, end) candidate pair in a window is connected."""


class MatchFailure(RuntimeError):
    """A trajectory could not be matched at all."""


@dataclass(frozen=True)
class MatchParams:
    W_len: float = 600.0
    W_olen: float = 300.0
    k: int = 4
    q: float = 0.99
    max_candidates: int = 32
    escalation: float = 2.0
    nsp: NspParams = field(default_factory=NspParams)
    repair: bool = True

    def __post_init__(self):
        if not 0 < self.W_olen < self.W_len:
            raise ValueError("window lengths need 0 < W_olen < W_len")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.q < 1:
            raise ValueError("q must lie in (0, 1)")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")


class GeometricScorer:
    """Region-blind stand-in for an LED model: fixed radius, score exp(-err / scale)."""

    def __init__(self, radius: float = 100.0, scale: float = 20.0):
        self.radius = radius
        self.scale = scale
        self.radius_max = radius

    def radius_at(self, p: GeoPoint, q: float = 0.99) -> float:
        return self.radius

    def score_error(self, at: GeoPoint, err: float, fallback: Optional[GeoPoint] = None) -> float:
        return math.exp(-err / self.scale)


@dataclass(frozen=True, eq=False)
class ScoredPath:
    """A candidate path for one window with its per-point matches and scores."""

    path: NetPath
    match_points: Tuple[CandidatePoint, ...]
    offsets: Tuple[float, ...]
    scores: Tuple[float, ...]
    f: float
    af: float
    w_left: int = 0
    w_right: int = 0
    pred_candidate: Optional[CandidatePoint] = None
    pred_path: Optional["ScoredPath"] = None

    @property
    def start(self) -> CandidatePoint:
        return self.match_points[0]

    @property
    def end(self) -> CandidatePoint:
        return self.match_points[-1]


@dataclass(frozen=True)
class MatchedPath:
    traj_id: str
    segments: Tuple[str, ...]
    per_point: Tuple[CandidatePoint, ...]
    total_af: float
    path: NetPath
    first_idx: int = 0
    offsets: Tuple[float, ...] = ()

    @property
    def indices(self) -> range:
        return range(self.first_idx, self.first_idx + len(self.per_point))


@dataclass(frozen=True)
class SplitMatch:
    """Result for a trajectory that had to be cut at unmatchable windows."""

    traj_id: str
    fragments: Tuple[MatchedPath, ...]
    gaps: Tuple[Tuple[int, int], ...]


MatchResult = Union[MatchedPath, SplitMatch]


# -- windows ------------------------------------------------------------------------

def window_bounds(traj: Union[Trajectory, Sequence[GeoPoint]], params: MatchParams) -> List[Tuple[int, int]]:
    """Inclusive index ranges of length-based, overlapping windows.

    Each window runs until its chord length reaches ``W_len`` (or the
    trajectory ends). The next window starts at the latest point that still
    leaves at least ``W_olen`` of overlap, and always at least one point
    further than the previous start; its end likewise moves past the
    previous end.
    """
    points = traj.points if isinstance(traj, Trajectory) else traj
    if len(points) < 2:
        raise ValueError("need at least 2 points")
    cum = path_chords(points)
    last = len(points) - 1
    out = []
    left = 0
    prev_right = 0
    while True:
        right = max(left + 1, prev_right + 1)
        while right < last and cum[right] - cum[left] < params.W_len - _EPS:
            right += 1
        out.append((left, right))
        prev_right = right
        if right == last:
            return out
        nxt = left + 1
        for j in range(right - 1, left, -1):
            if cum[right] - cum[j] >= params.W_olen - _EPS:
                nxt = j
                break
        left = max(nxt, left + 1)


# -- scoring ------------------------------------------------------------------------

def project_points(net: RoadNetwork, path: NetPath, points: Sequence[GeoPoint]):
    """Order-preserving projection of window points onto ``path``.

    The first and last points are pinned to the path's ends; every interior
    point goes to the nearest position at or after the previous one (ties to
    the smaller offset). Returns (match_points, path_offsets).
    """
    xy, cum, starts = path_geometry(net, path)
    total = float(cum[-1])
    P = net.proj.many_to_xy(points)
    n = len(P)
    a = xy[:-1]
    d = xy[1:] - a
    seglen = np.diff(cum)
    safe = np.where(seglen > 0, seglen, 1.0)
    # unconstrained projection of every point on every piece
    t = ((P[:, None, 0] - a[None, :, 0]) * d[None, :, 0] + (P[:, None, 1] - a[None, :, 1]) * d[None, :, 1])
    t = np.clip(np.where(seglen > 0, t / (safe * safe), 0.0), 0.0, 1.0)
    qx = a[None, :, 0] + t * d[None, :, 0]
    qy = a[None, :, 1] + t * d[None, :, 1]
    D = np.hypot(qx - P[:, None, 0], qy - P[:, None, 1])
    O = cum[None, :-1] + t * seglen[None, :]
    piece_end = cum[1:]
    matches, offsets = [], []
    prev = 0.0
    for i in range(n):
        px, py = float(P[i, 0]), float(P[i, 1])
        if i == 0 or i == n - 1:
            off = 0.0 if i == 0 else total
            x, y = (float(v) for v in (xy[0] if i == 0 else xy[-1]))
            err = math.hypot(px - x, py - y)
        else:
            # first piece that still reaches past ``prev``
            j0 = int(np.searchsorted(piece_end, prev, side="left"))
            j0 = min(j0, len(seglen) - 1)
            # the piece holding ``prev`` needs its projection clipped at prev
            if O[i, j0] >= prev:
                off, x, y, err = float(O[i, j0]), float(qx[i, j0]), float(qy[i, j0]), float(D[i, j0])
            else:
                off = prev
                x = float(a[j0, 0] + (prev - cum[j0]) / safe[j0] * d[j0, 0]) if seglen[j0] > 0 else float(a[j0, 0])
                y = float(a[j0, 1] + (prev - cum[j0]) / safe[j0] * d[j0, 1]) if seglen[j0] > 0 else float(a[j0, 1])
                err = math.hypot(px - x, py - y)
            if j0 + 1 < len(seglen):
                rest = D[i, j0 + 1:]
                k = int(np.argmin(rest))
                if rest[k] < err - 1e-12:
                    j = j0 + 1 + k
                    off, x, y, err = float(O[i, j]), float(qx[i, j]), float(qy[i, j]), float(rest[k])
        prev = off
        if i == 0:
            sid, soff = path.segments[0], float(path.entry_offset)
        elif i == n - 1:
            sid, soff = path.segments[-1], float(path.exit_offset)
        else:
            _, sid, soff = locate(path, starts, net, off)
        matches.append(CandidatePoint(net.proj.to_geo(x, y), sid, soff, float(err)))
        offsets.append(float(off))
    return matches, offsets


def score_path(net: RoadNetwork, led, path: NetPath, window_points: Sequence[GeoPoint]):
    """Sum of per-point tail plausibilities along ``path``.

    Returns (f, match_points, per_point_scores, path_offsets).
    """
    if not path.segments:
        raise ValueError("empty path")
    matches, offsets = project_points(net, path, window_points)
    scores = score_points(led, matches, window_points)
    return math.fsum(scores), matches, scores, offsets


def score_points(led, matches: Sequence[CandidatePoint], window_points: Sequence[GeoPoint]) -> List[float]:
    if hasattr(led, "score_many"):
        return led.score_many(matches, window_points)
    return [led.score_error(m.position, m.err, p) for m, p in zip(matches, window_points)]


def accumulate(current: ScoredPath, w_left: int) -> float:
    """Window score plus the accumulated score of the predecessor path."""
    if w_left == 0:
        return current.f
    if current.pred_path is None:
        raise ValueError("window past the trajectory start has no predecessor path")
    return current.f + current.pred_path.af


AF_TIE = 1e-9


def rank_key(sp: ScoredPath):
    """Sort key: higher af first, then shorter path, then segment ids.

    af is quantized to AF_TIE so that scores differing only by float noise
    (e.g. two zero-error projections) fall through to the length tie-break.
    """
    return (-round(sp.af / AF_TIE), sp.path.length, sp.path.segments, sp.path.entry_offset, sp.path.exit_offset)


class WindowMatcher:
    """Per-trajectory matching context shared by windows and detour repair."""

    def __init__(self, net: RoadNetwork, led, params: MatchParams, router: Optional[Router] = None):
        self.net = net
        self.led = led
        self.params = params
        self.router = router or Router(net)
        self._depth_limit = 0

    rank_key = staticmethod(rank_key)

    def candidates_at(self, point: GeoPoint, scale: float = 1.0) -> List[CandidatePoint]:
        radius = self.led.radius_at(point, self.params.q) * scale
        return candidates(self.net, point, radius)[:self.params.max_candidates]

    def window_candidates(self, point: GeoPoint) -> List[CandidatePoint]:
        """LED-radius candidates, doubled once (capped at the model's maximum radius) if none are found."""
        found = self.candidates_at(point)
        if found:
            return found
        r = self.led.radius_at(point, self.params.q)
        wider = min(r * self.params.escalation, max(getattr(self.led, "radius_max", r), r))
        if wider > r:
            found = candidates(self.net, point, wider)[:self.params.max_candidates]
        return found

    def _scored(self, path: NetPath, points: Sequence[GeoPoint]) -> ScoredPath:
        f, matches, scores, offsets = score_path(self.net, self.led, path, points)
        return ScoredPath(path, tuple(matches), tuple(offsets), tuple(scores), f, f)

    def combine(self, left: ScoredPath, right: ScoredPath) -> ScoredPath:
        """Join two sub-window paths that meet at the split point (counted once, from the left)."""
        path = join_paths(self.net, left.path, right.path)
        base = left.path.length
        scores = left.scores + right.scores[1:]
        f = math.fsum(scores)
        return ScoredPath(path, left.match_points + right.match_points[1:],
                          left.offsets + tuple(base + o for o in right.offsets[1:]), scores, f, f)

    def _use_points(self, points: Sequence[GeoPoint]):
        if getattr(self, "points", None) is not points:
            self.points = points
            self._memo: Dict[tuple, Optional[ScoredPath]] = {}

    def solve(self, lo: int, hi: int, starts: Sequence[CandidatePoint], ends: Sequence[CandidatePoint],
              depth: int = 0) -> List[ScoredPath]:
        """Score every connected (start, end) pair over points lo..hi, repairing detours; best first."""
        out = []
        for a in starts:
            for b in ends:
                sp = self._solve_pair(lo, hi, a, b, depth)
                if sp is not None:
                    out.append(sp)
        out.sort(key=rank_key)
        return out

    def _solve_pair(self, lo, hi, a, b, depth) -> Optional[ScoredPath]:
        key = (lo, hi, a.c, a.offset, b.c, b.offset, depth, self._depth_limit)
        if key in self._memo:
            return self._memo[key]
        path = self.router.route(a, b)
        sp = None
        if path is not None:
            window = self.points[lo:hi + 1]
            sp = self.maybe_repair(self._scored(path, window), lo, hi, depth)
        self._memo[key] = sp
        return sp

    def maybe_repair(self, sp: ScoredPath, lo: int, hi: int, depth: int) -> ScoredPath:
        if not self.params.repair or depth >= self._depth_limit:
            return sp
        window = self.points[lo:hi + 1]
        if path_chords(window)[-1] < self.params.nsp.len:
            return sp
        flag = detect(sp.match_points, window, self.led, self.params.nsp)
        if flag is None:
            return sp
        assert depth + 1 <= self._depth_limit, "detour repair recursion exceeded its bound"
        better = repair(sp, (lo, hi), flag, self, depth)
        return better if better is not None else sp

    def match_window(self, points: Sequence[GeoPoint], bounds: Tuple[int, int],
                     previous: Optional[Sequence[ScoredPath]]) -> List[ScoredPath]:
        """Top-k scored paths for one window (escalating the end radius once on failure)."""
        self._use_points(points)
        l, r = bounds
        self._depth_limit = depth_bound(path_chords(points[l:r + 1])[-1], self.params.nsp)
        if previous:
            seeds: Dict[Tuple[str, float], ScoredPath] = {}
            for sp in previous:
                m = sp.match_points[l - sp.w_left]
                key = (m.c, round(m.offset, 6))
                if key not in seeds or rank_key(sp) < rank_key(seeds[key]):
                    seeds[key] = sp
            starts = [(sp.match_points[l - sp.w_left], sp) for sp in seeds.values()]
        else:
            starts = [(c, None) for c in self.window_candidates(points[l])]
        ends = self.window_candidates(points[r])
        scored = self._pairs(starts, ends, l, r)
        if not scored and ends:
            wider = self.candidates_at(points[r], self.params.escalation)
            if len(wider) > len(ends):
                scored = self._pairs(starts, wider, l, r)
        if not scored:
            raise WindowFailure(f"no connected candidate pair in window {l}..{r}")
        scored.sort(key=rank_key)
        return scored[:self.params.k]

    def _pairs(self, starts, ends, l, r) -> List[ScoredPath]:
        out = []
        for cand, pred in starts:
            for sp in self.solve(l, r, [cand], ends):
                sp = replace(sp, w_left=l, w_right=r, pred_path=pred,
                             pred_candidate=None if pred is None else cand)
                out.append(replace(sp, af=sp.f if pred is None else accumulate(sp, l)))
        return out


# -- backtracking --------------------------------------------------------------------

def backtrack(net: RoadNetwork, final_retained: Sequence[ScoredPath], traj_id: str = "") -> MatchedPath:
    """Follow predecessor links from the best final path and splice the chain.

    Overlapping GPS indices take the later window's matches; paths are cut
    at the shared start candidate of the later window.
    """
    if not final_retained:
        raise ValueError("no retained paths")
    best = min(final_retained, key=rank_key)
    chain = []
    node: Optional[ScoredPath] = best
    while node is not None:
        chain.append(node)
        node = node.pred_path
    chain.reverse()
    per_point: List[CandidatePoint] = []
    offsets: List[float] = []
    path: Optional[NetPath] = None
    for i, sp in enumerate(chain):
        base = 0.0 if path is None else path.length
        if i + 1 < len(chain):
            nxt = chain[i + 1]
            keep = nxt.w_left - sp.w_left
            assert 0 < keep <= sp.w_right - sp.w_left, "broken window chain"
            shared = sp.match_points[keep]
            assert nxt.start.c == shared.c and abs(nxt.start.offset - shared.offset) < 1e-6, \
                "window chain does not share its split point"
            piece = slice_path(net, sp.path, 0.0, sp.offsets[keep])
            per_point.extend(sp.match_points[:keep])
            offsets.extend(base + o for o in sp.offsets[:keep])
        else:
            piece = sp.path
            per_point.extend(sp.match_points)
            offsets.extend(base + o for o in sp.offsets)
        path = piece if path is None else join_paths(net, path, piece)
    return MatchedPath(traj_id, path.segments, tuple(per_point), best.af, path, chain[0].w_left, tuple(offsets))


def _truncate(net: RoadNetwork, mp: MatchedPath, stop: int) -> Optional[MatchedPath]:
    """Keep the matches for GPS indices below ``stop``."""
    keep = stop - mp.first_idx
    if keep <= 0:
        return None
    if keep >= len(mp.per_point):
        return mp
    path = slice_path(net, mp.path, 0.0, mp.offsets[keep - 1])
    return replace(mp, segments=path.segments, per_point=mp.per_point[:keep], path=path,
                   offsets=mp.offsets[:keep])


def match_trajectory(net: RoadNetwork, led, traj: Trajectory, params: Optional[MatchParams] = None,
                     router: Optional[Router] = None) -> MatchResult:
    """Match a whole trajectory.

    Returns a MatchedPath, or a SplitMatch when some window could not be
    connected even after widening the search; those points are reported as
    gaps and matching restarts after them.
    """
    params = params or MatchParams()
    ctx = WindowMatcher(net, led, params, router)
    points = traj.points
    bounds = window_bounds(points, params)
    fragments: List[MatchedPath] = []
    gaps: List[Tuple[int, int]] = []
    retained: Optional[List[ScoredPath]] = None
    for w, (l, r) in enumerate(bounds):
        try:
            retained = ctx.match_window(points, (l, r), retained)
            continue
        except WindowFailure:
            pass
        if retained:
            done = _truncate(net, backtrack(net, retained, traj.id), l)
            if done is not None:
                fragments.append(done)
        try:
            retained = ctx.match_window(points, (l, r), None)
            continue
        except WindowFailure:
            retained = None
        stop = bounds[w + 1][0] - 1 if w + 1 < len(bounds) else r
        gaps.append((l, stop))
        log.warning("trajectory %s: no match for points %d..%d", traj.id, l, stop)
    if retained:
        fragments.append(backtrack(net, retained, traj.id))
    if not fragments:
        raise MatchFailure(f"trajectory {traj.id}: no window could be matched")
    if not gaps and len(fragments) == 1:
        return fragments[0]
    return SplitMatch(traj.id, tuple(fragments), tuple(_merge_gaps(gaps)))


def _merge_gaps(gaps):
    out = []
    for a, b in gaps:
        if out and a <= out[-1][1] + 1:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def match_spt_baseline(net: RoadNetwork, led, traj: Trajectory, radius: float = 100.0,
                       router: Optional[Router] = None) -> MatchedPath:
    """Global shortest-path matching with a length-similarity criterion.

    Candidates are taken only at the first and last points. Each connecting
    shortest path scores ``min(L_path, L_traj) / max(L_path, L_traj)`` minus
    the mean projection distance divided by ``radius``. ``led`` is unused and
    accepted for call compatibility.
    """
    router = router or Router(net)
    points = traj.points
    starts = candidates(net, points[0], radius)
    ends = candidates(net, points[-1], radius)
    if not starts or not ends:
        raise MatchFailure(f"trajectory {traj.id}: no candidates at an endpoint")
    traj_len = path_chords(points)[-1]
    best = None
    for a in starts:
        for b in ends:
            path = router.route(a, b)
            if path is None:
                continue
            matches, _ = project_points(net, path, points)
            hi = max(path.length, traj_len)
            sim = min(path.length, traj_len) / hi if hi > 0 else 1.0
            score = sim - math.fsum(m.err for m in matches) / len(matches) / radius
            key = (-score, path.length, path.segments, path.entry_offset, path.exit_offset)
            if best is None or key < best[0]:
                best = (key, path, matches, score)
    if best is None:
        raise MatchFailure(f"trajectory {traj.id}: endpoints are not connected")
    _, path, matches, score = best
    _, offsets = project_points(net, path, points)
    return MatchedPath(traj.id, path.segments, tuple(matches), score, path, 0, tuple(offsets))


# -- output --------------------------------------------------------------------------

def write_matches(results: Sequence[MatchResult], out: TextIO,
                  failures: Sequence[Tuple[str, str]] = ()) -> None:
    """CSV ``traj_id,af,segments,points`` with points as ``idx:seg:offset:err``.

    A split trajectory gets one row per fragment plus ``traj_id,gap,lo,hi``
    rows; each ``(traj_id, reason)`` in ``failures`` becomes ``traj_id,fail,,reason``.
    """
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["traj_id", "af", "segments", "points"])
    for res in results:
        frags = res.fragments if isinstance(res, SplitMatch) else (res,)
        for mp in frags:
            pts = ";".join(f"{i}:{m.c}:{float(m.offset)!r}:{float(m.err)!r}"
                           for i, m in zip(mp.indices, mp.per_point))
            w.writerow([mp.traj_id, repr(float(mp.total_af)), ";".join(mp.segments), pts])
        if isinstance(res, SplitMatch):
            for a, b in res.gaps:
                w.writerow([res.traj_id, "gap", a, b])
    for tid, reason in failures:
        w.writerow([tid, "fail", "", reason])
