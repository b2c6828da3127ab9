from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from ..netgraph import METERS_PER_DEGREE, GeoPoint, RoadNetwork


@dataclass(frozen=True)
class GridSpec:
    """Square cells laid out row-major from a southwest origin.

    ``ref_lat`` fixes the degrees-to-meters scale; it should match the
    network the grid is used with.
    """

    origin: GeoPoint
    cell_size: float = 100.0
    cols: int = 1
    rows: int = 1
    ref_lat: Optional[float] = None

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.cols < 1 or self.rows < 1:
            raise ValueError("cols and rows must be >= 1")
        if self.ref_lat is None:
            object.__setattr__(self, "ref_lat", self.origin.lat)

    @property
    def n_cells(self) -> int:
        return self.cols * self.rows

    @property
    def kx(self) -> float:
        return METERS_PER_DEGREE * math.cos(math.radians(self.ref_lat))

    def offsets(self, lon, lat):
        """Meters east/north of the origin (scalar or array)."""
        return (np.asarray(lon) - self.origin.lon) * self.kx, (np.asarray(lat) - self.origin.lat) * METERS_PER_DEGREE

    def col_row(self, idx: int) -> Tuple[int, int]:
        return idx % self.cols, idx // self.cols

    def index(self, col: int, row: int) -> int:
        return row * self.cols + col

    def neighbors(self, idx: int) -> Iterator[int]:
        c, r = self.col_row(idx)
        for dc, dr in ((0, -1), (-1, 0), (1, 0), (0, 1)):
            cc, rr = c + dc, r + dr
            if 0 <= cc < self.cols and 0 <= rr < self.rows:
                yield self.index(cc, rr)

    def adjacent(self, i: int, j: int) -> bool:
        (ci, ri), (cj, rj) = self.col_row(i), self.col_row(j)
        return abs(ci - cj) + abs(ri - rj) == 1

    def cells_of(self, lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
        """Vectorized cell_of; -1 marks points outside the grid."""
        dx, dy = self.offsets(lon, lat)
        col = np.floor(dx / self.cell_size).astype(int)
        row = np.floor(dy / self.cell_size).astype(int)
        ok = (col >= 0) & (col < self.cols) & (row >= 0) & (row < self.rows)
        return np.where(ok, row * self.cols + col, -1)


def cell_of(grid: GridSpec, p: GeoPoint) -> Optional[int]:
    """Containing cell index; cells are half-open on their north and east sides."""
    dx, dy = grid.offsets(p.lon, p.lat)
    col = math.floor(float(dx) / grid.cell_size)
    row = math.floor(float(dy) / grid.cell_size)
    if 0 <= col < grid.cols and 0 <= row < grid.rows:
        return grid.index(col, row)
    return None


def grid_for_network(net: RoadNetwork, cell_size: float = 100.0, margin: float = 100.0) -> GridSpec:
    """Grid covering the network's bounding box plus ``margin`` meters."""
    xy = np.array(list(net.node_xy.values()))
    for s in net.segments.values():
        xy = np.vstack([xy, s.xy])
    x0, y0 = xy.min(axis=0) - margin
    x1, y1 = xy.max(axis=0) + margin
    cols = max(1, math.ceil((x1 - x0) / cell_size))
    rows = max(1, math.ceil((y1 - y0) / cell_size))
    origin = net.proj.to_geo(x0, y0)
    return GridSpec(origin, cell_size, cols, rows, net.proj.ref_lat)


def connected_components(cells: List[int], grid: GridSpec) -> List[List[int]]:
    """4-connected components of a cell set, each sorted, ordered by first cell."""
    remaining = set(cells)
    comps = []
    for start in sorted(cells):
        if start not in remaining:
            continue
        remaining.discard(start)
        stack, comp = [start], []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in grid.neighbors(u):
                if v in remaining:
                    remaining.discard(v)
                    stack.append(v)
        comps.append(sorted(comp))
    return comps
