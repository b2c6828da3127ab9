"""Graph construction and spectral partitioning of grid cells by error histogram."""
from __future__ import annotations

from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import KMeans

from .grid import GridSpec, connected_components
from .histograms import ErrorHistogram


def similarity(Vi: ErrorHistogram, Vj: ErrorHistogram, sigma: float, adjacent: bool) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if len(Vi.bin_edges) != len(Vj.bin_edges) or np.any(Vi.bin_edges != Vj.bin_edges):
        raise ValueError("histograms use different bin edges")
    if not adjacent:
        return 0.0
    d2 = float(np.sum((Vi.normalized() - Vj.normalized()) ** 2))
    return float(np.exp(-d2 / (2.0 * sigma * sigma)))


def adjacent_pairs(cells: Sequence[int], grid: GridSpec) -> List[Tuple[int, int]]:
    pos = {c: k for k, c in enumerate(cells)}
    pairs = []
    for c in cells:
        for v in grid.neighbors(c):
            if v > c and v in pos:
                pairs.append((pos[c], pos[v]))
    return pairs


def median_bandwidth(vectors: np.ndarray, pairs: Sequence[Tuple[int, int]]) -> float:
    """Median histogram distance over adjacent pairs, with fallbacks for degenerate input."""
    if not pairs:
        return 1.0
    i, j = np.array(pairs).T
    d = np.linalg.norm(vectors[i] - vectors[j], axis=1)
    med = float(np.median(d))
    if med > 0:
        return med
    pos = d[d > 0]
    return float(pos.mean()) if len(pos) else 1.0


def similarity_matrix(histograms: Mapping[int, ErrorHistogram], grid: GridSpec,
                      sigma: Optional[float] = None) -> Tuple[List[int], np.ndarray, float]:
    """Kernel matrix over cells that carry data; zero for non-adjacent pairs."""
    cells = sorted(c for c, h in histograms.items() if h.has_data)
    if not cells:
        return [], np.zeros((0, 0)), float(sigma or 1.0)
    vectors = np.array([histograms[c].normalized() for c in cells]).reshape(len(cells), -1)
    pairs = adjacent_pairs(cells, grid)
    if sigma is None:
        sigma = median_bandwidth(vectors, pairs)
    W = np.zeros((len(cells), len(cells)))
    for i, j in pairs:
        d2 = float(np.sum((vectors[i] - vectors[j]) ** 2))
        W[i, j] = W[j, i] = np.exp(-d2 / (2.0 * sigma * sigma))
    return cells, W, float(sigma)


def normalized_laplacian(W: np.ndarray) -> np.ndarray:
    d = W.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    return np.eye(len(W)) - inv[:, None] * W * inv[None, :]


def eigengap_k(W: np.ndarray, cap: int) -> int:
    """Cluster count at the largest gap among the smallest Laplacian eigenvalues."""
    n = len(W)
    cap = max(1, min(cap, n - 1))
    if n <= 1:
        return 1
    vals = np.linalg.eigvalsh(normalized_laplacian(W))
    gaps = np.diff(vals[:cap + 1])
    return int(np.argmax(gaps)) + 1


def spectral_cluster(W: np.ndarray, cells: Sequence[int], grid: GridSpec, K_g: int,
                     seed: int = 0) -> Dict[int, int]:
    """Label cells into K_g spectral clusters, then split spatially disconnected labels.

    Labels are renumbered 0.. in order of each component's smallest cell index.
    """
    n = len(cells)
    if K_g < 1:
        raise ValueError("K_g must be >= 1")
    if K_g > n:
        raise ValueError(f"K_g={K_g} exceeds the number of covered cells ({n})")
    if K_g == 1:
        raw = np.zeros(n, dtype=int)
    else:
        vals, vecs = np.linalg.eigh(normalized_laplacian(W))
        U = vecs[:, :K_g]
        norms = np.linalg.norm(U, axis=1, keepdims=True)
        U = np.where(norms > 0, U / np.where(norms > 0, norms, 1.0), 0.0)
        km = KMeans(n_clusters=K_g, n_init=10, random_state=seed)
        raw = km.fit_predict(U)
    groups: Dict[int, List[int]] = {}
    for c, lab in zip(cells, raw):
        groups.setdefault(int(lab), []).append(int(c))
    comps = []
    for members in groups.values():
        comps.extend(connected_components(members, grid))
    comps.sort(key=lambda comp: comp[0])
    return {c: k for k, comp in enumerate(comps) for c in comp}

