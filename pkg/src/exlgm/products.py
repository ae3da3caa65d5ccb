"""Posterior summaries: return-level surfaces, predictive draws and variograms."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DegenerateSiteError, InvalidInputError
from .evt import XI_ZERO_TOL, gev_quantile_neglog
from .link import link_inverse_arrays
from .smooth import PosteriorSamples

DEFAULT_BLOCK_SIZE = 365.25


@dataclass
class ReturnLevelSurface:
    period: float
    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    q975: np.ndarray


@dataclass
class PredictConfig:
    thresholds: np.ndarray
    block_size: float = DEFAULT_BLOCK_SIZE
    n_draws: Optional[int] = None

    def __post_init__(self):
        self.thresholds = np.atleast_1d(np.asarray(self.thresholds, dtype=float))
        if not (self.block_size > 0 and math.isfinite(self.block_size)):
            raise InvalidInputError("block size must be positive")
        if self.n_draws is not None and self.n_draws < 1:
            raise InvalidInputError("n_draws must be positive")


def site_parameters(samples: PosteriorSamples):
    """``(mu, sigma, xi)`` draws, each of shape (draws, N)."""
    return link_inverse_arrays(samples.eta_block(0), samples.eta_block(1), samples.eta_block(2))


def return_level_draws(samples: PosteriorSamples, M: float) -> np.ndarray:
    if not (M > 1 and math.isfinite(M)):
        raise InvalidInputError("return period must exceed 1")
    mu, sigma, xi = site_parameters(samples)
    return gev_quantile_neglog(-math.log1p(-1.0 / M), mu, sigma, xi)


def return_level_surface(samples: PosteriorSamples, M: float) -> ReturnLevelSurface:
    """Per-site posterior mean, SD and central 95% interval of the ``M``-block return level."""
    z = return_level_draws(samples, M)
    q = np.quantile(z, [0.025, 0.975], axis=0)
    sd = np.std(z, axis=0, ddof=1) if z.shape[0] > 1 else np.zeros(z.shape[1])
    return ReturnLevelSurface(float(M), z.mean(axis=0), sd, q[0], q[1])


def _log_neglog_gev_cdf(u, mu, sigma, xi):
    """``log(-log G(u))`` for arrays of parameters; ``-inf`` above an upper endpoint."""
    w = (u - mu) / sigma
    s = 1.0 + xi * w
    out = np.empty(np.broadcast(w, xi).shape)
    w, xi, s = np.broadcast_arrays(w, xi, s)
    zero = np.abs(xi) < XI_ZERO_TOL
    out[zero] = -w[zero]
    nz = ~zero
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = nz & (s > 0)
        out[inside] = -np.log1p(xi[inside] * w[inside]) / xi[inside]
    out[nz & (s <= 0) & (xi > 0)] = math.inf  # below the lower endpoint: G(u) = 0
    out[nz & (s <= 0) & (xi < 0)] = -math.inf  # above the upper endpoint: G(u) = 1
    return out


def predictive_draws_from_parameters(mu, sigma, xi, threshold: float, block_size: float, rng) -> np.ndarray:
    """One conditional draw of ``Y | Y > u`` per parameter triple, ``Y ~ G^(1/B)``."""
    mu, sigma, xi = (np.asarray(v, dtype=float) for v in (mu, sigma, xi))
    log_t = _log_neglog_gev_cdf(threshold, mu, sigma, xi)
    # survival of the daily distribution at u: 1 - exp(-t/B)
    with np.errstate(over="ignore"):
        surv = -np.expm1(-np.exp(log_t) / block_size)
    if np.any(surv <= 0):
        raise DegenerateSiteError(f"threshold {threshold} at or above the upper endpoint for some draws")
    v = rng.random(mu.shape)
    v = np.where(v == 0.0, np.finfo(float).tiny, v)
    # q ~ U(F(u), 1) written as q = 1 - v*S(u); the block-scale level solves G(y) = q^B
    t = -block_size * np.log1p(-v * surv)
    y = gev_quantile_neglog(t, mu, sigma, xi)
    # guard the last ulp: conditioning requires y > u
    return np.maximum(y, np.nextafter(threshold, math.inf))


def posterior_predictive_draws(samples: PosteriorSamples, site: int, cfg: PredictConfig, rng) -> np.ndarray:
    """Monte-Carlo draws from the posterior predictive of an exceedance at ``site``.

    Posterior draws are cycled in order when ``cfg.n_draws`` exceeds their number.
    """
    if not 0 <= site < samples.n_sites:
        raise InvalidInputError(f"site index {site} out of range")
    u = float(cfg.thresholds[site] if cfg.thresholds.size > 1 else cfg.thresholds[0])
    if not math.isfinite(u):
        raise InvalidInputError("threshold must be finite")
    mu, sigma, xi = site_parameters(samples)
    S = mu.shape[0]
    n = S if cfg.n_draws is None else cfg.n_draws
    idx = np.arange(n) % S
    return predictive_draws_from_parameters(mu[idx, site], sigma[idx, site], xi[idx, site], u, cfg.block_size, rng)


@dataclass
class Variogram:
    centers: np.ndarray
    semivariance: np.ndarray  # NaN where a bin is empty
    counts: np.ndarray


def empirical_variogram(values, coords, n_bins: int = 15, max_dist: Optional[float] = None) -> Variogram:
    """Matheron estimator on equal-width distance bins over ``[0, max_dist]``.

    ``max_dist`` defaults to half the largest inter-site distance.  The last
    bin is closed on the right; pairs farther apart are ignored.
    """
    values = np.asarray(values, dtype=float).ravel()
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if values.size < 2 or coords.shape[0] != values.size:
        raise InvalidInputError("need at least 2 sites with matching coordinates")
    if n_bins < 1:
        raise InvalidInputError("n_bins must be >= 1")
    d = pdist(coords)
    sq = pdist(values[:, None], "sqeuclidean")
    if max_dist is None:
        max_dist = 0.5 * float(d.max())
    if not (max_dist > 0 and math.isfinite(max_dist)):
        raise InvalidInputError("max_dist must be positive")
    edges = np.linspace(0.0, max_dist, n_bins + 1)
    keep = d <= max_dist
    b = np.minimum(np.searchsorted(edges, d[keep], side="right") - 1, n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    sums = np.bincount(b, weights=sq[keep], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, 0.5 * sums / np.maximum(counts, 1), np.nan)
    return Variogram(0.5 * (edges[:-1] + edges[1:]), gamma, counts)


# ---------------------------------------------------------------------------
# writers


def _g(x) -> str:
    return format(float(x), ".17g")


def write_return_levels(path, site_ids, lon, lat, surfaces) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("site_id,lon,lat,M,mean,sd,q025,q975\n")
        for s in surfaces:
            for k, sid in enumerate(site_ids):
                fh.write(
                    ",".join(
                        [str(int(sid)), _g(lon[k]), _g(lat[k]), _g(s.period), _g(s.mean[k]), _g(s.sd[k]), _g(s.q025[k]), _g(s.q975[k])]
                    )
                    + "\n"
                )


def write_predictive(path, site_id: int, draws) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("site_id,draw,value\n")
        for k, v in enumerate(draws):
            fh.write(f"{int(site_id)},{k},{_g(v)}\n")


def write_variogram(path, vg: Variogram) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("bin_center,semivariance,count\n")
        for c, g, n in zip(vg.centers, vg.semivariance, vg.counts):
            fh.write(f"{_g(c)},{'NA' if not np.isfinite(g) else _g(g)},{int(n)}\n")
