from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, TextIO, Tuple

import numpy as np

from ..netgraph import GeoPoint, NetPath, RoadNetwork
from . import fitting
from .cluster import eigengap_k, similarity_matrix, spectral_cluster
from .fitting import ErrorDistribution
from .grid import GridSpec, cell_of
from .histograms import DEFAULT_EDGES, ErrorHistogram, collect_errors, fill_missing, histogram_from_samples

log = logging.getLogger(__name__)


@dataclass
class LedConfig:
    cell_size: float = 100.0
    bin_edges: Tuple[float, ...] = DEFAULT_EDGES
    min_samples: int = 20
    fill_rounds: int = 2
    sigma: Optional[float] = None
    K_g: Optional[int] = None
    fit_min_samples: int = fitting.FIT_MIN_SAMPLES
    ks_gate: float = fitting.KS_GATE
    radius_min: float = fitting.RADIUS_MIN
    radius_max: float = fitting.RADIUS_MAX
    seed: int = 0

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class LedModel:
    grid: GridSpec
    cell_to_subregion: np.ndarray
    subregions: Dict[int, ErrorDistribution]
    K_g: int
    sigma: float
    global_dist: Optional[ErrorDistribution]
    bin_edges: Tuple[float, ...] = DEFAULT_EDGES
    radius_min: float = fitting.RADIUS_MIN
    radius_max: float = fitting.RADIUS_MAX
    config_hash: str = ""
    _radius_cache: Dict[Tuple[int, float], float] = field(default_factory=dict, repr=False, compare=False)

    def subregion_at(self, p: GeoPoint) -> Optional[int]:
        c = cell_of(self.grid, p)
        if c is None:
            return None
        sr = int(self.cell_to_subregion[c])
        return sr if sr >= 0 else None

    def dist_at(self, p: GeoPoint) -> ErrorDistribution:
        sr = self.subregion_at(p)
        if sr is not None:
            return self.subregions[sr]
        if self.global_dist is None:
            raise LookupError("point outside coverage and no pooled distribution available")
        return self.global_dist

    def radius_at(self, p: GeoPoint, q: float = 0.99) -> float:
        sr = self.subregion_at(p)
        key = (-1 if sr is None else sr, q)
        r = self._radius_cache.get(key)
        if r is None:
            r = fitting.search_radius(self.dist_at(p), q, self.radius_min, self.radius_max)
            self._radius_cache[key] = r
        return r

    def score_error(self, at: GeoPoint, err: float, fallback: Optional[GeoPoint] = None) -> float:
        """Upper-tail plausibility 1 - CDF(err) in the sub-region containing ``at``.

        When ``at`` is outside coverage, ``fallback`` (typically the GPS
        point) is tried before the pooled distribution.
        """
        if fallback is not None and self.subregion_at(at) is None and self.subregion_at(fallback) is not None:
            at = fallback
        return float(1.0 - fitting.cdf(self.dist_at(at), err))

    def score_many(self, matches, points) -> List[float]:
        """Vectorized score_error for matched candidates and their GPS points."""
        lon = np.array([m.position.lon for m in matches])
        lat = np.array([m.position.lat for m in matches])
        err = np.array([m.err for m in matches], dtype=float)
        sr = self._subregions_of(lon, lat)
        fb = self._subregions_of(np.array([p.lon for p in points]), np.array([p.lat for p in points]))
        sr = np.where((sr < 0) & (fb >= 0), fb, sr)
        out = np.empty(len(err))
        for key in np.unique(sr):
            mask = sr == key
            if key >= 0:
                dist = self.subregions[int(key)]
            elif self.global_dist is None:
                raise LookupError("point outside coverage and no pooled distribution available")
            else:
                dist = self.global_dist
            out[mask] = 1.0 - np.asarray(fitting.cdf(dist, err[mask]), dtype=float)
        return [float(v) for v in out]

    def _subregions_of(self, lon, lat) -> np.ndarray:
        cells = self.grid.cells_of(lon, lat)
        return np.where(cells >= 0, self.cell_to_subregion[np.maximum(cells, 0)], -1)

    def family_counts(self) -> Dict[str, int]:
        out = {k: 0 for k in fitting.CONTINUOUS + (fitting.HISTOGRAM,)}
        for d in self.subregions.values():
            out[d.kind] += 1
        return out

    def subregion_cells(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {}
        for c, sr in enumerate(self.cell_to_subregion):
            if sr >= 0:
                out.setdefault(int(sr), []).append(c)
        return out


def pooled_histogram(cells: Sequence[int], histograms: Mapping[int, ErrorHistogram],
                     edges: Sequence[float]) -> ErrorHistogram:
    """Merge member cells: raw samples concatenated, or mean normalized vector if no raw data."""
    edges = np.asarray(edges, float)
    raws = [histograms[c].samples for c in cells if histograms[c].samples is not None and len(histograms[c].samples)]
    if raws:
        samples = np.concatenate(raws)
        counts = np.sum([histograms[c].counts for c in cells if not histograms[c].filled
                         and histograms[c].samples is not None and len(histograms[c].samples)], axis=0)
        return ErrorHistogram(edges, np.asarray(counts, float), samples)
    vec = np.mean([histograms[c].normalized() for c in cells], axis=0)
    return ErrorHistogram(edges, vec, None, filled=True)


def build_led(net: RoadNetwork, fixed_routes: Mapping[str, NetPath],
              trajectories: Sequence[Tuple[str, Sequence[GeoPoint]]], grid: GridSpec,
              config: Optional[LedConfig] = None) -> LedModel:
    """Histograms -> neighbor fill -> spectral sub-regions -> per-sub-region fit."""
    cfg = config or LedConfig()
    raw = collect_errors(net, fixed_routes, trajectories, grid, cfg.bin_edges)
    hists = fill_missing(raw, grid, cfg.min_samples, cfg.fill_rounds)
    cells, W, sigma = similarity_matrix(hists, grid, cfg.sigma)
    labels = np.full(grid.n_cells, -1, dtype=int)
    subregions: Dict[int, ErrorDistribution] = {}
    K_g = 0
    if cells:
        K_g = cfg.K_g if cfg.K_g is not None else eigengap_k(W, max(1, len(cells) // 4))
        assign = spectral_cluster(W, cells, grid, K_g, cfg.seed)
        for c, lab in assign.items():
            labels[c] = lab
        members: Dict[int, List[int]] = {}
        for c, lab in sorted(assign.items()):
            members.setdefault(lab, []).append(c)
        for lab, cs in sorted(members.items()):
            subregions[lab] = fitting.fit_distribution(pooled_histogram(cs, hists, cfg.bin_edges),
                                                       cfg.fit_min_samples, cfg.ks_gate)
    all_raw = [h.samples for h in raw.values() if h.samples is not None and len(h.samples)]
    global_dist = None
    if all_raw:
        samples = np.concatenate(all_raw)
        global_dist = fitting.fit_distribution(histogram_from_samples(samples, cfg.bin_edges),
                                               cfg.fit_min_samples, cfg.ks_gate)
    log.info("LED model: %d covered cells, %d sub-regions, sigma=%.4g", len(cells), len(subregions), sigma)
    return LedModel(grid, labels, subregions, K_g, sigma, global_dist, tuple(cfg.bin_edges),
                    cfg.radius_min, cfg.radius_max, cfg.digest())


# -- serialization ---------------------------------------------------------------
#
# Line-oriented text. Floats are written with repr() so reloading is exact.
#
#   ledmm-led 1
#   grid <origin_lon> <origin_lat> <ref_lat> <cell_size> <cols> <rows>
#   meta sigma <float> K_g <int> radius_min <float> radius_max <float> config <hash>
#   edges <e0> <e1> ...
#   cells <id_0> <id_1> ...            (row-major, -1 = uncovered)
#   dist <id|global> <kind> <params...> <aic|NA>
#   hist <id|global> <e0> ... | <c0> ...   (histogram fallback; flag "insufficient" optional)

def _f(v) -> str:
    return repr(float(v))


def _dist_lines(key: str, d: ErrorDistribution) -> List[str]:
    if d.kind == fitting.HISTOGRAM:
        flag = " insufficient" if d.insufficient else ""
        return [f"hist {key} " + " ".join(_f(e) for e in d.edges) + " | "
                + " ".join(_f(c) for c in d.counts) + flag]
    aic = "NA" if d.aic is None else _f(d.aic)
    return [f"dist {key} {d.kind} " + " ".join(_f(p) for p in d.params) + f" {aic}"]


def dump_led(model: LedModel, out: TextIO) -> None:
    g = model.grid
    out.write("ledmm-led 1\n")
    out.write(f"grid {_f(g.origin.lon)} {_f(g.origin.lat)} {_f(g.ref_lat)} {_f(g.cell_size)} {g.cols} {g.rows}\n")
    out.write(f"meta sigma {_f(model.sigma)} K_g {model.K_g} radius_min {_f(model.radius_min)} "
              f"radius_max {_f(model.radius_max)} config {model.config_hash or 'NA'}\n")
    out.write("edges " + " ".join(_f(e) for e in model.bin_edges) + "\n")
    out.write("cells " + " ".join(str(int(v)) for v in model.cell_to_subregion) + "\n")
    for sr in sorted(model.subregions):
        for line in _dist_lines(str(sr), model.subregions[sr]):
            out.write(line + "\n")
    if model.global_dist is not None:
        for line in _dist_lines("global", model.global_dist):
            out.write(line + "\n")


def _parse_dist(tok: List[str]) -> Tuple[str, ErrorDistribution]:
    if tok[0] == "hist":
        key = tok[1]
        rest = tok[2:]
        insufficient = rest[-1] == "insufficient"
        if insufficient:
            rest = rest[:-1]
        bar = rest.index("|")
        edges = tuple(float(v) for v in rest[:bar])
        counts = tuple(float(v) for v in rest[bar + 1:])
        return key, ErrorDistribution(fitting.HISTOGRAM, (), None, edges, counts, insufficient)
    key, kind = tok[1], tok[2]
    aic = None if tok[-1] == "NA" else float(tok[-1])
    return key, ErrorDistribution(kind, tuple(float(v) for v in tok[3:-1]), aic)


def load_led(source: TextIO) -> LedModel:
    lines = [ln.split() for ln in source if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0][:1] != ["ledmm-led"]:
        raise ValueError("not an LED model file")
    grid = meta = edges = cells = None
    subregions: Dict[int, ErrorDistribution] = {}
    global_dist = None
    for lineno, tok in enumerate(lines[1:], 2):
        head = tok[0]
        try:
            if head == "grid":
                grid = GridSpec(GeoPoint(float(tok[1]), float(tok[2])), float(tok[4]), int(tok[5]), int(tok[6]),
                                float(tok[3]))
            elif head == "meta":
                meta = dict(zip(tok[1::2], tok[2::2]))
            elif head == "edges":
                edges = tuple(float(v) for v in tok[1:])
            elif head == "cells":
                cells = np.array([int(v) for v in tok[1:]], dtype=int)
            elif head in ("dist", "hist"):
                key, d = _parse_dist(tok)
                if key == "global":
                    global_dist = d
                else:
                    subregions[int(key)] = d
            else:
                raise ValueError(f"unknown record {head!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"LED model record {lineno}: {exc}") from exc
    if grid is None or meta is None or edges is None or cells is None:
        raise ValueError("LED model file is missing grid/meta/edges/cells records")
    if len(cells) != grid.n_cells:
        raise ValueError("cell array length does not match grid")
    missing = set(int(v) for v in cells if v >= 0) - set(subregions)
    if missing:
        raise ValueError(f"sub-regions without distributions: {sorted(missing)}")
    return LedModel(grid, cells, subregions, int(meta["K_g"]), float(meta["sigma"]), global_dist, edges,
                    float(meta["radius_min"]), float(meta["radius_max"]),
                    "" if meta.get("config") == "NA" else meta.get("config", ""))
