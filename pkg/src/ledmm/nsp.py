"""Detection and repair of local detours inside a matched window.

A detour shows up as a run of consecutive points whose distance to the
candidate path first grows and then shrinks again. ``detect`` finds such a
run; ``repair`` splits the window at the worst point and rematches both
halves, keeping the result only when it scores higher.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .netgraph import CandidatePoint, GeoPoint, distance


@dataclass(frozen=True)
class NspParams:
    n: int = 2
    err: float = 20.0
    max_err: float = 40.0
    len: float = 80.0
    deviation_gate: float = 0.05

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("nsp.n must be >= 2")
        if not 0 < self.err < self.max_err:
            raise ValueError("nsp thresholds need 0 < err < max_err")
        if self.len <= 0:
            raise ValueError("nsp.len must be positive")


@dataclass(frozen=True)
class NspFlag:
    start_idx: int
    end_idx: int
    peak_idx: int
    peak_err: float


def _runs(errs: Sequence[float], threshold: float):
    start = None
    for i, e in enumerate(list(errs) + [-math.inf]):
        if e > threshold:
            if start is None:
                start = i
        elif start is not None:
            yield start, i - 1
            start = None


def detect(match_points: Sequence[CandidatePoint], window_points: Sequence[GeoPoint], led,
           params: NspParams) -> Optional[NspFlag]:
    """Longest run of high-error points that passes every detour gate, or None.

    A run qualifies when it has at least ``n`` points with err > ``err``, its
    peak error exceeds ``max_err``, its chord length exceeds ``len`` and the
    least plausible point in it scores below ``deviation_gate``. Ties go to
    the earliest run.
    """
    if len(match_points) != len(window_points):
        raise ValueError("match points and window points are not aligned")
    errs = [m.err for m in match_points]
    chords = path_chords(window_points)
    best: Optional[NspFlag] = None
    for a, b in _runs(errs, params.err):
        if b - a + 1 < params.n:
            continue
        peak = max(range(a, b + 1), key=lambda i: (errs[i], -i))
        if errs[peak] <= params.max_err:
            continue
        if chords[b] - chords[a] <= params.len:
            continue
        worst = min(led.score_error(match_points[i].position, errs[i], window_points[i]) for i in range(a, b + 1))
        if worst >= params.deviation_gate:
            continue
        if best is None or b - a > best.end_idx - best.start_idx:
            best = NspFlag(a, b, peak, errs[peak])
    return best


def path_chords(points: Sequence[GeoPoint]):
    """Cumulative point-to-point distance along GPS points."""
    out = [0.0]
    for a, b in zip(points[:-1], points[1:]):
        out.append(out[-1] + distance(a, b))
    return out


def depth_bound(window_chord: float, params: NspParams) -> int:
    return math.ceil(window_chord / params.len) + 1


def repair(scored, span, flag: NspFlag, ctx, depth: int = 0):
    """Split at the flagged peak and rematch both halves.

    ``scored`` is the window's ScoredPath over trajectory points
    ``span = (lo, hi)``; ``ctx`` is the matcher context providing
    ``candidates_at``, ``solve``, ``combine`` and ``rank_key``. The left half
    runs from the original start to fresh candidates at the peak point, each
    left result seeds the right half to the original end. Returns the best
    combined path when it strictly beats ``scored``, otherwise None.
    """
    lo, hi = span
    p = lo + flag.peak_idx
    if p <= lo or p >= hi:
        return None
    start = scored.match_points[0]
    end = scored.match_points[-1]
    # the peak point is the noisiest in the run, so widen once if nothing is in reach
    split_cands = ctx.candidates_at(ctx.points[p]) or ctx.candidates_at(ctx.points[p], ctx.params.escalation)
    if not split_cands:
        return None
    lefts = ctx.solve(lo, p, [start], split_cands, depth + 1)
    best = None
    for left in lefts[:ctx.params.k]:
        rights = ctx.solve(p, hi, [left.match_points[-1]], [end], depth + 1)
        if not rights:
            continue
        merged = ctx.combine(left, rights[0])
        if best is None or ctx.rank_key(merged) < ctx.rank_key(best):
            best = merged
    if best is not None and best.f > scored.f:
        return best
    return None
