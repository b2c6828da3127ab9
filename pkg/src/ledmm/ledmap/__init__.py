"""Localization-error-distribution (LED) modeling over a cell grid."""
from .cluster import eigengap_k, similarity, similarity_matrix, spectral_cluster
from .fitting import ErrorDistribution, cdf, fit_candidates, fit_distribution, quantile, search_radius
from .grid import GridSpec, cell_of, connected_components, grid_for_network
from .histograms import DEFAULT_EDGES, ErrorHistogram, collect_errors, fill_missing, histogram_from_samples
from .model import LedConfig, LedModel, build_led, dump_led, load_led

__all__ = [
    "DEFAULT_EDGES", "ErrorDistribution", "ErrorHistogram", "GridSpec", "LedConfig", "LedModel",
    "build_led", "cdf", "cell_of", "collect_errors", "connected_components", "dump_led", "eigengap_k",
    "fill_missing", "fit_candidates", "fit_distribution", "grid_for_network", "histogram_from_samples",
    "load_led", "quantile", "search_radius", "similarity", "similarity_matrix", "spectral_cluster",
]
