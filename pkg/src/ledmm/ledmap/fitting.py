"""Maximum-likelihood fitting of error-magnitude distributions with AIC selection.

All continuous families live on [0, inf): the Gaussian and every mixture
component are truncated at zero and renormalized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri

from .histograms import ErrorHistogram

GAUSSIAN = "gaussian"
MIXTURE = "mixture"
EXPONENTIAL = "exponential"
LOGNORMAL = "lognormal"
HISTOGRAM = "histogram"
CONTINUOUS = (GAUSSIAN, MIXTURE, EXPONENTIAL, LOGNORMAL)

FIT_MIN_SAMPLES = 200
KS_GATE = 0.08
RADIUS_MIN = 15.0
RADIUS_MAX = 150.0
# mixtures with a smaller component are rejected: such spikes chase sampling noise
MIN_COMPONENT_WEIGHT = 0.05
# adjacent components must be this far apart (Ashman's D); closer pairs are one bump split in two
MIN_SEPARATION = 2.0

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class ErrorDistribution:
    """A fitted error-magnitude law.

    params by kind:
      gaussian     (mu, sigma)
      mixture      (w_1..w_m, mu_1..mu_m, sigma_1..sigma_m), m in {2, 3}
      exponential  (rate,)
      lognormal    (shape, scale)  with log X ~ N(log scale, shape**2)
      histogram    ()  -- edges/counts carry the data
    """

    kind: str
    params: Tuple[float, ...] = ()
    aic: Optional[float] = None
    edges: Optional[Tuple[float, ...]] = None
    counts: Optional[Tuple[float, ...]] = None
    insufficient: bool = False

    def __post_init__(self):
        k, p = self.kind, self.params
        if k == GAUSSIAN and not (len(p) == 2 and p[1] > 0):
            raise ValueError("gaussian needs sigma > 0")
        if k == MIXTURE:
            m = len(p) // 3
            if m not in (2, 3) or len(p) != 3 * m:
                raise ValueError("mixture needs 2 or 3 components")
            w = np.array(p[:m])
            if np.any(w <= 0) or abs(w.sum() - 1) > 1e-9 or np.any(np.array(p[2 * m:]) <= 0):
                raise ValueError("invalid mixture parameters")
        if k == EXPONENTIAL and not (len(p) == 1 and p[0] > 0):
            raise ValueError("exponential needs rate > 0")
        if k == LOGNORMAL and not (len(p) == 2 and p[0] > 0 and p[1] > 0):
            raise ValueError("lognormal needs shape > 0 and scale > 0")
        if k == HISTOGRAM and (self.edges is None or self.counts is None or sum(self.counts) <= 0):
            raise ValueError("histogram needs edges and positive counts")
        if k not in CONTINUOUS + (HISTOGRAM,):
            raise ValueError(f"unknown kind {k!r}")

    @property
    def components(self) -> int:
        return len(self.params) // 3 if self.kind == MIXTURE else 1

    def mean(self) -> float:
        """Mean error, by quadrature on the survival function."""
        hi = quantile(self, 0.99999)
        xs = np.linspace(0.0, hi, 4001)
        return float(integrate.trapezoid(1.0 - cdf(self, xs), xs))


# -- densities and distribution functions ------------------------------------

def _trunc_norm_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z * z - _LOG_SQRT_2PI - np.log(sigma) - log_ndtr(mu / sigma)


def _trunc_norm_cdf(x, mu, sigma):
    lo = ndtr(-mu / sigma)
    return (ndtr((x - mu) / sigma) - lo) / (1.0 - lo)


def _split_mixture(params):
    m = len(params) // 3
    p = np.asarray(params, dtype=float)
    return p[:m], p[m:2 * m], p[2 * m:]


def logpdf(dist: ErrorDistribution, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    k, p = dist.kind, dist.params
    if k == GAUSSIAN:
        out = _trunc_norm_logpdf(x, p[0], p[1])
    elif k == MIXTURE:
        w, mu, s = _split_mixture(p)
        comp = np.log(w)[:, None] + _trunc_norm_logpdf(x[None, :].reshape(1, -1), mu[:, None], s[:, None])
        out = logsumexp(comp, axis=0).reshape(x.shape)
    elif k == EXPONENTIAL:
        out = math.log(p[0]) - p[0] * x
    elif k == LOGNORMAL:
        shape, scale = p
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
            out = -0.5 * ((lx - math.log(scale)) / shape) ** 2 - lx - math.log(shape) - _LOG_SQRT_2PI
        out = np.where(x > 0, out, -np.inf)
    else:
        raise ValueError(f"no density for kind {k!r}")
    return np.where(x >= 0, out, -np.inf)


def cdf(dist: ErrorDistribution, err):
    """P(error <= err). Histograms interpolate linearly inside each bin."""
    x = np.asarray(err, dtype=float)
    k, p = dist.kind, dist.params
    if k == GAUSSIAN:
        out = _trunc_norm_cdf(x, p[0], p[1])
    elif k == MIXTURE:
        w, mu, s = _split_mixture(p)
        out = sum(wi * _trunc_norm_cdf(x, mi, si) for wi, mi, si in zip(w, mu, s))
    elif k == EXPONENTIAL:
        out = -np.expm1(-p[0] * np.maximum(x, 0.0))
    elif k == LOGNORMAL:
        shape, scale = p
        with np.errstate(divide="ignore"):
            out = ndtr((np.log(np.maximum(x, 0.0)) - math.log(scale)) / shape)
    else:
        edges = np.asarray(dist.edges)
        cum = np.concatenate([[0.0], np.cumsum(dist.counts)]) / float(np.sum(dist.counts))
        out = np.interp(x, edges, cum, left=0.0, right=1.0)
    out = np.clip(np.where(x < 0, 0.0, out), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def quantile(dist: ErrorDistribution, q: float) -> float:
    """Inverse CDF (closed form where available, otherwise bisection)."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    k, p = dist.kind, dist.params
    if k == GAUSSIAN:
        mu, s = p
        lo = ndtr(-mu / s)
        return float(max(mu + s * ndtri(lo + q * (1.0 - lo)), 0.0))
    if k == EXPONENTIAL:
        return -math.log1p(-q) / p[0]
    if k == LOGNORMAL:
        return float(p[1] * math.exp(p[0] * ndtri(q)))
    if k == HISTOGRAM:
        edges = np.asarray(dist.edges)
        cum = np.concatenate([[0.0], np.cumsum(dist.counts)]) / float(np.sum(dist.counts))
        i = int(np.searchsorted(cum, q, side="left"))
        i = min(max(i, 1), len(edges) - 1)
        lo_c, hi_c = cum[i - 1], cum[i]
        frac = 0.0 if hi_c <= lo_c else (q - lo_c) / (hi_c - lo_c)
        return float(edges[i - 1] + frac * (edges[i] - edges[i - 1]))
    hi = 1.0
    while cdf(dist, hi) < q:
        hi *= 2.0
    return float(optimize.brentq(lambda v: cdf(dist, v) - q, 0.0, hi, xtol=1e-10, rtol=1e-12))


def search_radius(dist: ErrorDistribution, q: float = 0.99, radius_min: float = RADIUS_MIN,
                  radius_max: float = RADIUS_MAX) -> float:
    return float(min(max(quantile(dist, q), radius_min), radius_max))


# -- fitting --------------------------------------------------------------------

def n_params(dist: ErrorDistribution) -> int:
    return {GAUSSIAN: 2, EXPONENTIAL: 1, LOGNORMAL: 2}.get(dist.kind, 3 * dist.components - 1)


def loglik(dist: ErrorDistribution, x: np.ndarray, w: Optional[np.ndarray] = None) -> float:
    lp = logpdf(dist, x)
    if w is None:
        return float(lp.sum())
    return float(np.sum(w * np.where(w > 0, lp, 0.0)))


def aic(dist: ErrorDistribution, x, w=None) -> float:
    return 2 * n_params(dist) - 2 * loglik(dist, np.asarray(x, float), w)


def _wstats(x, w):
    mean = float(np.average(x, weights=w))
    var = float(np.average((x - mean) ** 2, weights=w))
    return mean, math.sqrt(max(var, 0.0))


def _wquantile(x, w, q):
    order = np.argsort(x)
    c = np.cumsum(w[order])
    return float(x[order][min(np.searchsorted(c, q * c[-1]), len(x) - 1)])


def fit_exponential(x, w):
    return ErrorDistribution(EXPONENTIAL, (1.0 / max(_wstats(x, w)[0], 1e-12),))


def fit_lognormal(x, w):
    if np.any(x[w > 0] <= 0):
        return None
    mu, s = _wstats(np.log(x), w)
    if s <= 0:
        return None
    return ErrorDistribution(LOGNORMAL, (s, math.exp(mu)))


def fit_gaussian(x, w):
    mean, std = _wstats(x, w)
    tot = w.sum()

    def nll(theta):
        mu, ls = theta
        s = math.exp(ls)
        z = (x - mu) / s
        # weighted truncated-normal negative log likelihood and its gradient
        val = np.dot(w, 0.5 * z * z) + tot * (ls + _LOG_SQRT_2PI + log_ndtr(mu / s))
        r = math.exp(_log_mills(mu / s))
        g_mu = -np.dot(w, z) / s + tot * r / s
        g_ls = -np.dot(w, z * z) + tot * (1.0 - r * mu / s)
        return float(val), np.array([g_mu, g_ls])

    # location >= 0: a mode below zero makes the family a reparametrized exponential
    res = optimize.minimize(nll, [max(mean, 0.0), math.log(max(std, 1e-6))], jac=True, method="L-BFGS-B",
                            bounds=[(0.0, None), (None, None)])
    mu, ls = res.x
    return ErrorDistribution(GAUSSIAN, (float(mu), float(math.exp(ls))))


def _log_mills(a):
    """log(phi(a) / Phi(a)), stable for very negative a."""
    return -0.5 * a * a - _LOG_SQRT_2PI - log_ndtr(a)


def _mixture_from_theta(theta, m):
    logits = np.concatenate([[0.0], theta[:m - 1]])
    w = np.exp(logits - logsumexp(logits))
    mu = theta[m - 1:2 * m - 1]
    s = np.exp(theta[2 * m - 1:])
    return w, mu, s


def fit_mixture(x, w, m):
    """EM on untruncated Gaussians for a start, then direct truncated MLE."""
    tot = w.sum()
    mean, std = _wstats(x, w)
    if std <= 0:
        return None
    mu = np.array([_wquantile(x, w, (i + 0.5) / m) for i in range(m)])
    s = np.full(m, std / m)
    pi = np.full(m, 1.0 / m)
    for _ in range(60):
        lp = np.log(pi)[:, None] - 0.5 * ((x[None, :] - mu[:, None]) / s[:, None]) ** 2 - np.log(s)[:, None]
        r = np.exp(lp - logsumexp(lp, axis=0))
        rw = r * w[None, :]
        nk = rw.sum(axis=1) + 1e-12
        pi = nk / tot
        mu = (rw @ x) / nk
        s = np.sqrt(np.maximum((rw * (x[None, :] - mu[:, None]) ** 2).sum(axis=1) / nk, (1e-3 * std) ** 2))
    pi = np.maximum(pi, 1e-6)
    pi /= pi.sum()
    ls_min = math.log(1e-3 * std)
    theta0 = np.concatenate([np.clip(np.log(pi[1:] / pi[0]), -30.0, 30.0), np.maximum(mu, 0.0),
                             np.maximum(np.log(s), ls_min)])
    bounds = [(-30.0, 30.0)] * (m - 1) + [(0.0, None)] * m + [(ls_min, None)] * m

    def nll(theta):
        wk, mk, sk = _mixture_from_theta(theta, m)
        z = (x[None, :] - mk[:, None]) / sk[:, None]
        lp = (np.log(wk)[:, None] - 0.5 * z * z - _LOG_SQRT_2PI - np.log(sk)[:, None]
              - log_ndtr(mk / sk)[:, None])
        ll = logsumexp(lp, axis=0)
        r = np.exp(lp - ll[None, :]) * w[None, :]
        rk = r.sum(axis=1)
        mills = np.exp(_log_mills(mk / sk))
        g_mu = -((r * z).sum(axis=1) / sk - rk * mills / sk)
        g_ls = -((r * z * z).sum(axis=1) - rk + rk * mills * mk / sk)
        # softmax weights: d/dlogit_j = rk_j - tot * w_j
        g_logit = -(rk - tot * wk)[1:]
        return float(-np.dot(w, ll)), np.concatenate([g_logit, g_mu, g_ls])

    res = optimize.minimize(nll, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 500})
    wk, mk, sk = _mixture_from_theta(res.x, m)
    if np.any(wk < MIN_COMPONENT_WEIGHT) or not np.all(np.isfinite(res.x)):
        return None
    order = np.argsort(mk)
    wk, mk, sk = wk[order] / wk.sum(), mk[order], sk[order]
    sep = math.sqrt(2.0) * np.diff(mk) / np.sqrt(sk[:-1] ** 2 + sk[1:] ** 2)
    if np.any(sep < MIN_SEPARATION):
        return None
    return ErrorDistribution(MIXTURE, tuple(float(v) for v in np.concatenate([wk, mk, sk])))


def fit_candidates(x, w=None) -> Dict[str, ErrorDistribution]:
    """Fit every continuous family; the mixture entry is the better (by AIC) of 2 and 3 components."""
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    keep = w > 0
    x, w = x[keep], w[keep]
    out = {}
    for kind, fitter in ((GAUSSIAN, fit_gaussian), (EXPONENTIAL, fit_exponential), (LOGNORMAL, fit_lognormal)):
        d = fitter(x, w)
        if d is not None:
            out[kind] = _with_aic(d, x, w)
    mixes = [d for d in (fit_mixture(x, w, 2), fit_mixture(x, w, 3)) if d is not None]
    mixes = [_with_aic(d, x, w) for d in mixes]
    if mixes:
        out[MIXTURE] = min(mixes, key=lambda d: d.aic)
    return {k: d for k, d in out.items() if math.isfinite(d.aic)}


def _with_aic(d, x, w):
    return ErrorDistribution(d.kind, d.params, aic(d, x, w))


def ks_statistic(dist: ErrorDistribution, x, w=None, edges=None) -> float:
    """Kolmogorov-Smirnov distance; binned data is compared at the bin edges."""
    x = np.asarray(x, dtype=float)
    if edges is not None:
        cum = np.concatenate([[0.0], np.cumsum(w)]) / np.sum(w)
        return float(np.max(np.abs(cum - cdf(dist, np.asarray(edges, float)))))
    xs = np.sort(x)
    n = len(xs)
    F = cdf(dist, xs)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def histogram_distribution(hist: ErrorHistogram, insufficient: bool = False) -> ErrorDistribution:
    return ErrorDistribution(HISTOGRAM, (), None, tuple(float(e) for e in hist.bin_edges),
                             tuple(float(c) for c in hist.counts), insufficient)


def fit_distribution(hist: ErrorHistogram, min_samples: int = FIT_MIN_SAMPLES,
                     ks_gate: float = KS_GATE, use_samples: bool = True) -> ErrorDistribution:
    """Best family by AIC, or the histogram itself when too sparse or a poor fit.

    Raw samples attached to the histogram are used when present; otherwise
    bin midpoints are weighted by counts.
    """
    if hist.n < min_samples:
        return histogram_distribution(hist, insufficient=True)
    raw = use_samples and hist.samples is not None and len(hist.samples) >= min_samples
    if raw:
        x, w = np.asarray(hist.samples, float), None
        spread = float(np.std(x))
    else:
        x = 0.5 * (hist.bin_edges[:-1] + hist.bin_edges[1:])
        w = np.asarray(hist.counts, float)
        spread = _wstats(x, w)[1]
    if spread < 1e-6:
        return histogram_distribution(hist)
    fits = fit_candidates(x, w)
    if not fits:
        return histogram_distribution(hist)
    best = min(fits.values(), key=lambda d: (d.aic, d.kind))
    ks = ks_statistic(best, x) if raw else ks_statistic(best, x, w, hist.bin_edges)
    if ks > ks_gate:
        return histogram_distribution(hist)
    return best
