"""Univariate extreme-value distributions and the Poisson point process likelihood.

The GEV, GP and point-process formulas are all removable-singular at
``xi = 0``.  Every evaluation goes through :func:`log1p_ratio`, which
switches to the Gumbel/exponential limit for ``|xi| < XI_ZERO_TOL`` and to a
short series between that and ``XI_SERIES_TOL``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

XI_ZERO_TOL = 1e-12
XI_SERIES_TOL = 1e-8


@dataclass(frozen=True)
class PPParameters:
    """Location, scale and shape of the GEV / point-process tail model."""

    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        for name in ("mu", "sigma", "xi"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite, got {getattr(self, name)}")
        if self.sigma <= 0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")

    def as_tuple(self):
        return (self.mu, self.sigma, self.xi)


@dataclass(frozen=True)
class ExceedanceSet:
    """Threshold exceedances at one site.

    ``n_total`` is the number of replicates the exceedances were drawn from,
    ``n_block`` the intensity rescaling (number of blocks, e.g. years).
    """

    threshold: float
    exceedances: np.ndarray
    n_total: int
    n_block: float

    def __post_init__(self):
        exc = np.asarray(self.exceedances, dtype=float).ravel()
        object.__setattr__(self, "exceedances", exc)
        if not math.isfinite(self.threshold):
            raise InvalidInputError("threshold must be finite")
        if not np.all(np.isfinite(exc)):
            raise InvalidInputError("exceedances must be finite")
        if np.any(exc <= self.threshold):
            raise InvalidInputError("every exceedance must be strictly above the threshold")
        if int(self.n_total) != self.n_total or self.n_total < 1:
            raise InvalidInputError("n_total must be a positive integer")
        if exc.size > self.n_total:
            raise InvalidInputError("more exceedances than replicates")
        if not (self.n_block > 0 and math.isfinite(self.n_block)):
            raise InvalidInputError("n_block must be positive")

    @classmethod
    def from_series(cls, values: Sequence[float], threshold: float, n_block: float):
        values = np.asarray(values, dtype=float)
        return cls(threshold, values[values > threshold], values.size, n_block)

    @property
    def count(self) -> int:
        return int(self.exceedances.size)


def log1p_ratio(xi, w):
    """Return ``log(1 + xi*w) / xi`` with the ``xi -> 0`` limit ``w``.

    NaN is returned where ``1 + xi*w <= 0``.
    """
    xi = np.asarray(xi, dtype=float)
    w = np.asarray(w, dtype=float)
    xi, w = np.broadcast_arrays(xi, w)
    x = xi * w
    out = np.full(x.shape, np.nan)
    axi = np.abs(xi)
    zero = axi < XI_ZERO_TOL
    series = (~zero) & (axi < XI_SERIES_TOL)
    full = ~(zero | series)
    out[zero] = w[zero]
    xs = x[series]
    out[series] = w[series] * (1.0 - xs / 2.0 + xs * xs / 3.0)
    ok = full & (x > -1.0)
    out[ok] = np.log1p(x[ok]) / xi[ok]
    if out.ndim == 0:
        return float(out)
    return out


def _check_finite(*args):
    for a in args:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("non-finite input")


def gev_cdf(z, p: PPParameters):
    """GEV distribution function ``G(z)``.

    Returns 0 below the lower endpoint (``xi > 0``) and 1 above the upper
    endpoint (``xi < 0``).
    """
    _check_finite(z)
    w = (np.asarray(z, dtype=float) - p.mu) / p.sigma
    s = np.asarray(1.0 + p.xi * w)
    with np.errstate(over="ignore", invalid="ignore"):
        t = np.exp(-np.asarray(log1p_ratio(p.xi, w)))
        out = np.exp(-t)
    if abs(p.xi) >= XI_ZERO_TOL:
        outside = s <= 0
        out = np.where(outside, 0.0 if p.xi > 0 else 1.0, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def gev_quantile_neglog(t, mu, sigma, xi):
    """GEV quantile at probability ``exp(-t)``, vectorised over all arguments.

    Working with ``t = -log(prob)`` avoids losing precision for probabilities
    close to one.
    """
    t = np.asarray(t, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    xi = np.asarray(xi, dtype=float)
    t, mu, sigma, xi = np.broadcast_arrays(t, mu, sigma, xi)
    lt = np.log(t)
    # (t**(-xi) - 1)/xi  ==  expm1(-xi*log t)/xi
    a = -xi * lt
    ratio = np.empty(a.shape)
    axi = np.abs(xi)
    zero = axi < XI_ZERO_TOL
    series = (~zero) & (axi < XI_SERIES_TOL)
    full = ~(zero | series)
    ratio[zero] = -lt[zero]
    ratio[series] = -lt[series] * (1.0 + a[series] / 2.0 + a[series] ** 2 / 6.0)
    ratio[full] = np.expm1(a[full]) / xi[full]
    out = mu + sigma * ratio
    if out.ndim == 0:
        return float(out)
    return out


def gev_return_level(p_exc, p: PPParameters):
    """Level exceeded with probability ``p_exc`` per block, ``G^{-1}(1 - p_exc)``."""
    p_exc = np.asarray(p_exc, dtype=float)
    if np.any(~np.isfinite(p_exc)) or np.any((p_exc <= 0) | (p_exc >= 1)):
        raise InvalidInputError("p_exc must lie in (0, 1)")
    return gev_quantile_neglog(-np.log1p(-p_exc), p.mu, p.sigma, p.xi)


def gp_cdf(y, kappa_u: float, xi: float):
    """Generalized Pareto distribution function for excesses ``y >= 0``."""
    _check_finite(y, kappa_u, xi)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise InvalidInputError("GP excesses must be nonnegative")
    if kappa_u <= 0:
        raise InvalidInputError("kappa_u must be positive")
    w = y / kappa_u
    with np.errstate(invalid="ignore"):
        out = -np.expm1(-np.asarray(log1p_ratio(xi, w)))
    if abs(xi) >= XI_ZERO_TOL and xi < 0:
        out = np.where(1.0 + xi * w <= 0, 1.0, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def ppp_log_intensity(y, p: PPParameters):
    """Log intensity of the limiting point process at level ``y``.

    Points outside the support ``1 + xi (y - mu)/sigma > 0`` get ``-inf``.
    The intensity is time-homogeneous so no time argument is needed.
    """
    w = (np.asarray(y, dtype=float) - p.mu) / p.sigma
    r = np.asarray(log1p_ratio(p.xi, w))
    out = -math.log(p.sigma) - (1.0 + p.xi) * r
    out = np.where(np.isnan(r), -np.inf, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def ppp_log_likelihood(e: ExceedanceSet, p: PPParameters) -> float:
    """Point-process log-likelihood of the exceedances of ``e.threshold``.

    Out-of-support configurations return ``-inf`` so that optimisers can back
    off rather than abort.
    """
    w_u = (e.threshold - p.mu) / p.sigma
    r_u = log1p_ratio(p.xi, w_u)
    if math.isnan(r_u):
        return -math.inf
    ll = -e.n_block * math.exp(-r_u)
    if e.count:
        li = ppp_log_intensity(e.exceedances, p)
        if np.any(np.isneginf(li)):
            return -math.inf
        # fsum keeps the result independent of the ordering of the exceedances
        ll += math.fsum(np.sort(li))
    return float(ll)


def _dratio_dxi(xi, w):
    """d/dxi of log1p_ratio(xi, w); series below 1e-6 to avoid cancellation."""
    xi = np.asarray(xi, dtype=float)
    w = np.asarray(w, dtype=float)
    xi, w = np.broadcast_arrays(xi, w)
    out = np.empty(w.shape)
    small = np.abs(xi) < 1e-6
    ws, xs = w[small], xi[small]
    out[small] = -(ws**2 / 2.0 - 2.0 * xs * ws**3 / 3.0 + 3.0 * xs**2 * ws**4 / 4.0)
    wl, xl = w[~small], xi[~small]
    s = 1.0 + xl * wl
    with np.errstate(invalid="ignore", divide="ignore"):
        out[~small] = wl / (xl * s) - np.log1p(xl * wl) / xl**2
    return out


def ppp_score(e: ExceedanceSet, p: PPParameters) -> np.ndarray:
    """Gradient of :func:`ppp_log_likelihood` with respect to (mu, sigma, xi).

    Only meaningful inside the support; outside it the result is NaN.
    """
    mu, sigma, xi = p.as_tuple()
    w_u = (e.threshold - mu) / sigma
    s_u = 1.0 + xi * w_u
    a_u = math.exp(-log1p_ratio(xi, w_u))
    # derivatives of A = s_u^(-1/xi)
    da_mu = a_u / (sigma * s_u)
    da_sigma = a_u * w_u / (sigma * s_u)
    da_xi = -a_u * float(_dratio_dxi(xi, w_u))
    g = -e.n_block * np.array([da_mu, da_sigma, da_xi])
    if e.count:
        w = (e.exceedances - mu) / sigma
        s = 1.0 + xi * w
        g[0] += (1.0 + xi) / sigma * np.sum(1.0 / s)
        g[1] += -e.count / sigma + (1.0 + xi) / sigma * np.sum(w / s)
        r = np.asarray(log1p_ratio(xi, w))
        # d/dxi of -(1+xi)*r = -r - (1+xi)*dr
        g[2] += np.sum(-r - (1.0 + xi) * _dratio_dxi(xi, w))
    return g


def generalized_log_likelihood(e: ExceedanceSet, p: PPParameters) -> float:
    """Point-process log-likelihood plus the shifted Beta(4, 4) log prior on ``xi``."""
    from .priors import beta_shape_log_prior

    lp = beta_shape_log_prior(p.xi)
    if lp == -math.inf:
        return -math.inf
    ll = ppp_log_likelihood(e, p)
    if ll == -math.inf:
        return -math.inf
    return ll + lp
