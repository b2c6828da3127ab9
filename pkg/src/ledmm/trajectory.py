"""Trajectories, ground truth records and their CSV formats."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, TextIO, Tuple

from .netgraph import GeoPoint, NetPath


@dataclass(frozen=True)
class Trajectory:
    id: str
    points: Tuple[GeoPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if len(self.points) < 2:
            raise ValueError(f"trajectory {self.id!r} needs at least 2 points")
        ts = [p.t for p in self.points]
        if any(t is not None for t in ts):
            if any(t is None for t in ts) or any(a > b for a, b in zip(ts[:-1], ts[1:])):
                raise ValueError(f"trajectory {self.id!r}: timestamps must be present and non-decreasing")

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class TruthEntry:
    """True path plus, per GPS point, the true (segment id, offset) position."""

    path: NetPath
    positions: Tuple[Tuple[str, float], ...]


def read_trajectories(source: TextIO) -> List[Trajectory]:
    """CSV ``traj_id,lon,lat,t``; rows grouped by trajectory id in file order."""
    groups: Dict[str, List[GeoPoint]] = {}
    reader = csv.reader(source)
    for lineno, row in enumerate(reader, 1):
        if not row or row[0].startswith("#"):
            continue
        if lineno == 1 and row[0] == "traj_id":
            continue
        if len(row) != 4:
            raise ValueError(f"trajectory file line {lineno}: expected 4 fields")
        try:
            groups.setdefault(row[0], []).append(GeoPoint(float(row[1]), float(row[2]), int(row[3])))
        except ValueError as exc:
            raise ValueError(f"trajectory file line {lineno}: {exc}") from exc
    return [Trajectory(k, pts) for k, pts in groups.items()]


def write_trajectories(trajs: Iterable[Trajectory], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["traj_id", "lon", "lat", "t"])
    for tr in trajs:
        for p in tr.points:
            w.writerow([tr.id, repr(float(p.lon)), repr(float(p.lat)), p.t])


def write_truth(truth: Dict[str, TruthEntry], out: TextIO) -> None:
    """CSV ``traj_id,entry_offset,exit_offset,segments,points`` (points as ``idx:seg:offset``)."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["traj_id", "entry_offset", "exit_offset", "segments", "points"])
    for tid, e in truth.items():
        pts = ";".join(f"{i}:{sid}:{float(off)!r}" for i, (sid, off) in enumerate(e.positions))
        w.writerow([tid, repr(float(e.path.entry_offset)), repr(float(e.path.exit_offset)),
                    ";".join(e.path.segments), pts])


def read_truth(source: TextIO, lengths: Dict[str, float]) -> Dict[str, TruthEntry]:
    """Inverse of write_truth; ``lengths`` maps segment id to length (for the path length)."""
    out = {}
    reader = csv.reader(source)
    next(reader, None)
    for row in reader:
        if not row:
            continue
        tid, a, b, segs, pts = row
        segs_t = tuple(segs.split(";"))
        a, b = float(a), float(b)
        total = sum(lengths[s] for s in segs_t) - a - (lengths[segs_t[-1]] - b)
        positions = []
        for item in pts.split(";"):
            _, sid, off = item.split(":")
            positions.append((sid, float(off)))
        out[tid] = TruthEntry(NetPath(segs_t, a, b, total), tuple(positions))
    return out


def write_routes(routes: Dict[str, NetPath], out: TextIO) -> None:
    """CSV ``route_id,entry_offset,exit_offset,length,segments``."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["route_id", "entry_offset", "exit_offset", "length", "segments"])
    for rid in sorted(routes):
        p = routes[rid]
        w.writerow([rid, repr(float(p.entry_offset)), repr(float(p.exit_offset)), repr(float(p.length)),
                    ";".join(p.segments)])


def read_routes(source: TextIO) -> Dict[str, NetPath]:
    out = {}
    reader = csv.reader(source)
    next(reader, None)
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != 5:
            raise ValueError(f"route file line {lineno}: expected 5 fields")
        rid, a, b, length, segs = row
        out[rid] = NetPath(tuple(segs.split(";")), float(a), float(b), float(length))
    return out


def write_assignments(pairs: Iterable[Tuple[str, str]], out: TextIO) -> None:
    """CSV ``traj_id,route_id`` tying fixed-route trajectories to their route."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["traj_id", "route_id"])
    for tid, rid in pairs:
        w.writerow([tid, rid])


def read_assignments(source: TextIO) -> Dict[str, str]:
    reader = csv.reader(source)
    next(reader, None)
    return {row[0]: row[1] for row in reader if row}


def chord_lengths(xy) -> List[float]:
    """Cumulative chord length along planar points."""
    out = [0.0]
    for (x0, y0), (x1, y1) in zip(xy[:-1], xy[1:]):
        out.append(out[-1] + ((x1 - x0) ** 2 + (y1 - y0) ** 2) ** 0.5)
    return out
