from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..netgraph import GeoPoint, NetPath, RoadNetwork, path_geometry
from .grid import GridSpec

log = logging.getLogger(__name__)

# 1 m bins up to 30 m, coarser beyond; the last bin [100, 200) takes everything >= 100 m
DEFAULT_EDGES = tuple([float(e) for e in range(0, 31)] + [35.0, 40.0, 50.0, 75.0, 100.0, 200.0])


@dataclass
class ErrorHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    filled: bool = False

    @property
    def n(self) -> float:
        return float(self.counts.sum())

    def normalized(self) -> np.ndarray:
        n = self.counts.sum()
        if n <= 0:
            return np.zeros(len(self.counts))
        return self.counts / n

    @property
    def has_data(self) -> bool:
        return self.n > 0


def empty_histogram(edges: Sequence[float] = DEFAULT_EDGES) -> ErrorHistogram:
    edges = np.asarray(edges, dtype=float)
    if edges[0] != 0 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must start at 0 and increase strictly")
    return ErrorHistogram(edges, np.zeros(len(edges) - 1))


def bin_errors(errors: np.ndarray, edges: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(edges, errors, side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 2)
    return np.bincount(idx, minlength=len(edges) - 1).astype(float)


def histogram_from_samples(errors, edges: Sequence[float] = DEFAULT_EDGES) -> ErrorHistogram:
    errors = np.asarray(errors, dtype=float)
    edges = np.asarray(edges, dtype=float)
    return ErrorHistogram(edges, bin_errors(errors, edges), errors.copy())


def distances_to_polyline(xy: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest position on a polyline."""
    a = xy[:-1][None, :, :]
    d = (xy[1:] - xy[:-1])[None, :, :]
    p = pts[:, None, :]
    ll = (d ** 2).sum(-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((p - a) * d).sum(-1) / ll
    t = np.clip(np.nan_to_num(t), 0.0, 1.0)
    q = a + t[..., None] * d
    return np.sqrt(((q - p) ** 2).sum(-1)).min(axis=1)


def collect_errors(net: RoadNetwork, fixed_routes: Mapping[str, NetPath],
                   trajectories: Sequence[Tuple[str, Sequence[GeoPoint]]], grid: GridSpec,
                   edges: Sequence[float] = DEFAULT_EDGES,
                   skipped: Optional[List[str]] = None) -> Dict[int, ErrorHistogram]:
    """Per-cell histograms of distances between GPS points and their known route.

    ``trajectories`` pairs a route id with a point sequence or Trajectory.
    Trajectories naming an unknown route are skipped (and listed in
    ``skipped`` when given).
    """
    edges = np.asarray(edges, dtype=float)
    per_cell: Dict[int, List[np.ndarray]] = {}
    geoms = {}
    for k, (route_id, points) in enumerate(trajectories):
        route = fixed_routes.get(route_id)
        if route is None:
            log.warning("trajectory %d: unknown route id %r, skipped", k, route_id)
            if skipped is not None:
                skipped.append(route_id)
            continue
        if route_id not in geoms:
            geoms[route_id] = path_geometry(net, route)[0]
        points = getattr(points, "points", points)
        if not len(points):
            continue
        pts = net.proj.many_to_xy(points)
        errs = distances_to_polyline(geoms[route_id], pts)
        lon = np.array([p.lon for p in points])
        lat = np.array([p.lat for p in points])
        cells = grid.cells_of(lon, lat)
        for c in np.unique(cells):
            if c < 0:
                continue
            per_cell.setdefault(int(c), []).append(errs[cells == c])
    out = {}
    for c in range(grid.n_cells):
        if c in per_cell:
            out[c] = histogram_from_samples(np.concatenate(per_cell[c]), edges)
        else:
            out[c] = ErrorHistogram(edges, np.zeros(len(edges) - 1), np.zeros(0))
    return out


def fill_missing(histograms: Mapping[int, ErrorHistogram], grid: GridSpec,
                 min_samples: int = 20, rounds: int = 2) -> Dict[int, ErrorHistogram]:
    """Replace sparse cells by the mean normalized histogram of usable neighbors.

    A neighbor is usable when it has at least ``min_samples`` samples or was
    filled in an earlier round. Each round reads the previous round's state.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    state = dict(histograms)

    def usable(h):
        return h is not None and (h.filled or h.n >= min_samples)

    for _ in range(rounds):
        updates = {}
        for c, h in state.items():
            if usable(h):
                continue
            nbrs = [state.get(v) for v in grid.neighbors(c)]
            vecs = [v.normalized() for v in nbrs if usable(v)]
            if not vecs:
                continue
            mean = np.mean(vecs, axis=0)
            updates[c] = ErrorHistogram(h.bin_edges, mean, h.samples, filled=True)
        if not updates:
            break
        state.update(updates)
    return state
