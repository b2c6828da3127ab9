"""Accuracy metrics, method registry and the evaluation sweep."""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, TextIO, Tuple

from .datagen import derive_seed, downsample
from .matcher import (GeometricScorer, MatchedPath, MatchFailure, MatchParams, MatchResult, SplitMatch,
                      match_spt_baseline, match_trajectory)
from .netgraph import NetPath, RoadNetwork, Router
from .trajectory import Trajectory, TruthEntry

METHODS = ("lnsp", "lnsp-nonsp", "lnsp-nosed", "spt")
DEFAULT_INTERVALS = (5, 10, 30, 60, 120)
NODE_TOL = 1e-6


def _fragments(matched: MatchResult) -> Tuple[MatchedPath, ...]:
    return matched.fragments if isinstance(matched, SplitMatch) else (matched,)


def _check_ids(matched: MatchResult, truth_id: Optional[str]):
    if truth_id is not None and matched.traj_id != truth_id:
        raise ValueError(f"trajectory id mismatch: {matched.traj_id!r} vs {truth_id!r}")


def _node_at(net: RoadNetwork, seg_id: str, offset: float) -> Optional[str]:
    s = net.segments[seg_id]
    if offset <= NODE_TOL:
        return s.start
    if offset >= s.l - NODE_TOL:
        return s.end
    return None


def acc(matched: MatchResult, truth: TruthEntry, net: Optional[RoadNetwork] = None,
        truth_id: Optional[str] = None) -> float:
    """Fraction of GPS points matched to their true segment.

    With ``net`` given, a point whose true and matched positions sit on the
    same node counts as correct whichever segment each names.
    """
    _check_ids(matched, truth_id)
    per_point = {}
    for mp in _fragments(matched):
        per_point.update(zip(mp.indices, mp.per_point))
    total = len(truth.positions)
    if total == 0:
        return 1.0
    good = 0
    for i, (sid, off) in enumerate(truth.positions):
        m = per_point.get(i)
        if m is None:
            continue
        if m.c == sid:
            good += 1
        elif net is not None:
            node = _node_at(net, sid, off)
            if node is not None and node == _node_at(net, m.c, m.offset):
                good += 1
    return good / total


def traversed(path: NetPath, lengths: Mapping[str, float]) -> Dict[str, List[Tuple[float, float]]]:
    """Merged traversed intervals per segment id."""
    raw: Dict[str, List[Tuple[float, float]]] = {}
    n = len(path.segments)
    for i, sid in enumerate(path.segments):
        lo = path.entry_offset if i == 0 else 0.0
        hi = path.exit_offset if i == n - 1 else lengths[sid]
        if hi > lo:
            raw.setdefault(sid, []).append((lo, hi))
    return {sid: _merge(ivs) for sid, ivs in raw.items()}


def _overlap(a: List[Tuple[float, float]], b: List[Tuple[float, float]]) -> float:
    return sum(max(0.0, min(x1, y1) - max(x0, y0)) for x0, x1 in a for y0, y1 in b)


def prc(matched: MatchResult, truth: TruthEntry, lengths: Mapping[str, float],
        truth_id: Optional[str] = None) -> float:
    """Length of the true path also covered by the matched path, over the true length (capped at 1)."""
    _check_ids(matched, truth_id)
    true_iv = traversed(truth.path, lengths)
    true_len = sum(b - a for ivs in true_iv.values() for a, b in ivs)
    if true_len <= 0:
        return 1.0
    got: Dict[str, List[Tuple[float, float]]] = {}
    for mp in _fragments(matched):
        for sid, ivs in traversed(mp.path, lengths).items():
            got.setdefault(sid, []).extend(ivs)
    shared = 0.0
    for sid, ivs in true_iv.items():
        if sid in got:
            shared += _overlap(ivs, _merge(got[sid]))
    return min(1.0, shared / true_len)


def _merge(ivs):
    ivs = sorted(ivs)
    out = [list(ivs[0])]
    for a, b in ivs[1:]:
        if a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [tuple(v) for v in out]


def mt(timings_s: Sequence[float]) -> float:
    """Mean wall-clock time per trajectory, in milliseconds."""
    if not timings_s:
        raise ValueError("no timings")
    return 1000.0 * math.fsum(timings_s) / len(timings_s)


# -- methods -----------------------------------------------------------------------

def method_runner(name: str, net: RoadNetwork, led, params: MatchParams,
                  spt_radius: float = 100.0) -> Callable[[Trajectory, Router], MatchResult]:
    """Matching function for a method name (see METHODS)."""
    if name == "lnsp":
        return lambda traj, router: match_trajectory(net, led, traj, params, router)
    if name == "lnsp-nonsp":
        p = replace(params, repair=False)
        return lambda traj, router: match_trajectory(net, led, traj, p, router)
    if name == "lnsp-nosed":
        scorer = GeometricScorer(100.0, 20.0)
        return lambda traj, router: match_trajectory(net, scorer, traj, params, router)
    if name == "spt":
        return lambda traj, router: match_spt_baseline(net, led, traj, spt_radius, router)
    raise ValueError(f"unknown method {name!r}; expected one of {', '.join(METHODS)}")


@dataclass
class TrajResult:
    method: str
    interval_s: int
    traj_id: str
    ok: bool
    acc: float
    prc: float
    seconds: float
    n_points: int
    af: float = float("nan")
    error: str = ""


@dataclass
class EvalRow:
    method: str
    interval_s: int
    acc: float
    prc: float
    mt_ms: float
    n_ok: int
    n_fail: int


@dataclass
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)
    details: List[TrajResult] = field(default_factory=list)

    def row(self, method: str, interval_s: int) -> EvalRow:
        for r in self.rows:
            if r.method == method and r.interval_s == interval_s:
                return r
        raise KeyError((method, interval_s))

    def write(self, out: TextIO) -> None:
        """CSV ``method,interval_s,acc,prc,mt_ms,n_ok,n_fail``."""
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["method", "interval_s", "acc", "prc", "mt_ms", "n_ok", "n_fail"])
        for r in self.rows:
            w.writerow([r.method, r.interval_s, f"{r.acc:.6f}", f"{r.prc:.6f}", f"{r.mt_ms:.3f}", r.n_ok, r.n_fail])

    def write_details(self, out: TextIO) -> None:
        """CSV ``method,interval_s,traj_id,status,n_points,acc,prc,ms,af,error``."""
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["method", "interval_s", "traj_id", "status", "n_points", "acc", "prc", "ms", "af", "error"])
        for d in self.details:
            w.writerow([d.method, d.interval_s, d.traj_id, "ok" if d.ok else "fail", d.n_points,
                        f"{d.acc:.6f}", f"{d.prc:.6f}", f"{1000 * d.seconds:.3f}", repr(float(d.af)), d.error])


def evaluate_one(net: RoadNetwork, runner, method: str, interval_s: int, traj: Trajectory,
                 truth: TruthEntry, router: Router) -> Tuple[TrajResult, Optional[MatchResult]]:
    lengths = {sid: s.l for sid, s in net.segments.items()}
    t0 = time.perf_counter()
    try:
        res = runner(traj, router)
    except MatchFailure as exc:
        return TrajResult(method, interval_s, traj.id, False, 0.0, 0.0, time.perf_counter() - t0,
                          len(traj), error=str(exc)), None
    secs = time.perf_counter() - t0
    af = res.total_af if isinstance(res, MatchedPath) else math.fsum(f.total_af for f in res.fragments)
    return TrajResult(method, interval_s, traj.id, True, acc(res, truth, net), prc(res, truth, lengths), secs,
                      len(traj), af), res


def thin(trips: Mapping[str, Tuple[Trajectory, TruthEntry]], interval_s: int, seed: int):
    """Downsample every trip to ``interval_s`` with a per-trip seed."""
    out = {}
    for k, tid in enumerate(sorted(trips)):
        traj, truth = trips[tid]
        out[tid] = downsample(traj, interval_s, derive_seed(seed, "downsample", k * 1000 + interval_s), truth)
    return out


_WORKER: dict = {}


def _init_worker(net, led, params, spt_radius):
    _WORKER.update(net=net, led=led, params=params, spt_radius=spt_radius, routers={})


def _work(job):
    method, interval_s, traj, truth = job
    net = _WORKER["net"]
    runner = method_runner(method, net, _WORKER["led"], _WORKER["params"], _WORKER["spt_radius"])
    router = _WORKER["routers"].setdefault(method, Router(net))
    return evaluate_one(net, runner, method, interval_s, traj, truth, router)


def _match_one(job):
    method, traj = job
    net = _WORKER["net"]
    runner = method_runner(method, net, _WORKER["led"], _WORKER["params"], _WORKER["spt_radius"])
    router = _WORKER["routers"].setdefault(method, Router(net))
    t0 = time.perf_counter()
    try:
        return runner(traj, router), time.perf_counter() - t0
    except MatchFailure as exc:
        return exc, time.perf_counter() - t0


def match_all(net: RoadNetwork, led, trajs: Sequence[Trajectory], method: str = "lnsp",
              params: Optional[MatchParams] = None, jobs: int = 1, spt_radius: float = 100.0):
    """Match every trajectory with one method, in input order.

    Returns ``[(traj_id, result_or_failure, seconds)]``; a failed trajectory
    carries its MatchFailure instead of a result.
    """
    params = params or MatchParams()
    method_runner(method, net, led, params)
    jobs_list = [(method, t) for t in trajs]
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(net, led, params, spt_radius)) as ex:
            outputs = list(ex.map(_match_one, jobs_list, chunksize=4))
    else:
        _init_worker(net, led, params, spt_radius)
        outputs = [_match_one(j) for j in jobs_list]
    return [(t.id, res, secs) for t, (res, secs) in zip(trajs, outputs)]


def run_suite(net: RoadNetwork, led, trips: Mapping[str, Tuple[Trajectory, TruthEntry]],
              methods: Sequence[str] = METHODS, intervals: Sequence[int] = DEFAULT_INTERVALS,
              params: Optional[MatchParams] = None, seed: int = 0, jobs: int = 1,
              spt_radius: float = 100.0, keep_matches: bool = False):
    """Match every trip with every method at every sampling interval.

    Returns the EvalReport, plus ``{(method, interval, traj_id): result}``
    when ``keep_matches`` is set. Results do not depend on ``jobs``.
    """
    params = params or MatchParams()
    for m in methods:
        method_runner(m, net, led, params)
    jobs_list = []
    for interval in intervals:
        thinned = thin(trips, interval, seed)
        for method in methods:
            for tid in sorted(thinned):
                traj, truth = thinned[tid]
                jobs_list.append((method, interval, traj, truth))
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(net, led, params, spt_radius)) as ex:
            outputs = list(ex.map(_work, jobs_list, chunksize=4))
    else:
        _init_worker(net, led, params, spt_radius)
        outputs = [_work(j) for j in jobs_list]
    report = EvalReport()
    matches = {}
    for (method, interval, traj, _), (res, matched) in zip(jobs_list, outputs):
        report.details.append(res)
        if keep_matches and matched is not None:
            matches[(method, interval, traj.id)] = matched
    for interval in intervals:
        for method in methods:
            group = [d for d in report.details if d.method == method and d.interval_s == interval]
            ok = [d for d in group if d.ok]
            n = len(group)
            report.rows.append(EvalRow(method, interval,
                                       math.fsum(d.acc for d in group) / n if n else 0.0,
                                       math.fsum(d.prc for d in group) / n if n else 0.0,
                                       mt([d.seconds for d in ok]) if ok else 0.0, len(ok), n - len(ok)))
    return (report, matches) if keep_matches else report
