"""Sitewise penalized maximum likelihood in latent coordinates (the "Max" step).

Each site is fitted on its own: the generalized log-likelihood
``log L(psi, tau, phi | y_i)`` (point-process likelihood plus the induced
shape prior on ``phi``) is maximised directly in ``(psi, tau, phi)``, so
the negative Hessian at the optimum is the observed information used by
the Gaussian likelihood approximation without any Jacobian correction.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.integrate import trapezoid

from . import evt
from .errors import (
    ConvergenceError,
    DegenerateSiteError,
    ExlgmError,
    InvalidInputError,
    TooFewExceedancesError,
)
from .link import TransformedParameters, h, h_inverse_derivative, link_inverse
from .priors import phi_log_prior, phi_log_prior_grad

log = logging.getLogger(__name__)

HESSIAN_REL_STEP = 1e-4
GRAD_TOL = 1e-5
XI_START = 0.05
N_JITTER = 5
JITTER_AGREEMENT = 1e-4


@dataclass(frozen=True)
class SiteSeries:
    site_id: int
    lon: float
    lat: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())


@dataclass(frozen=True)
class SiteFit:
    site_id: int
    eta_hat: TransformedParameters
    info: np.ndarray
    n_exceedances: int
    threshold: float
    lon: float = math.nan
    lat: float = math.nan
    flagged: bool = False
    n_block: float = 1.0

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.info)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


@dataclass
class ExclusionReport:
    excluded: list = field(default_factory=list)  # (site_id, lon, lat, reason)

    def add(self, series: SiteSeries, reason: str):
        self.excluded.append((series.site_id, series.lon, series.lat, reason))

    def __len__(self):
        return len(self.excluded)


# ---------------------------------------------------------------------------
# threshold


def select_threshold(values, q: float) -> float:
    """Type-7 empirical ``q``-quantile of the strictly positive values."""
    if not 0 < q < 1:
        raise InvalidInputError("q must lie in (0, 1)")
    values = np.asarray(values, dtype=float)
    pos = values[values > 0]
    if pos.size == 0:
        raise DegenerateSiteError("no strictly positive values")
    return float(np.quantile(pos, q, method="linear"))


# ---------------------------------------------------------------------------
# generic Gaussian-approximation machinery


def numerical_hessian(f: Callable[[np.ndarray], float], x, rel_step: float = HESSIAN_REL_STEP):
    """Central finite-difference Hessian of a scalar function, symmetrised.

    Steps are ``rel_step * max(|x_k|, 1)`` per coordinate.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    hs = rel_step * np.maximum(np.abs(x), 1.0)
    H = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = hs[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / hs[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = hs[j]
            H[i, j] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * hs[i] * hs[j])
            H[j, i] = H[i, j]
    return 0.5 * (H + H.T)


def repair_information(Q: np.ndarray):
    """Floor eigenvalues at ``1e-8 * max eigenvalue``; returns (matrix, repaired)."""
    w, V = np.linalg.eigh(Q)
    top = max(w.max(), 1e-300)
    floor = 1e-8 * top
    if w.min() > floor:
        return Q, False
    w = np.maximum(w, floor)
    R = (V * w) @ V.T
    return 0.5 * (R + R.T), True


@dataclass
class ModeFit:
    mode: np.ndarray
    info: np.ndarray
    loglik: float
    grad_norm: float
    repaired: bool


def gaussian_approximation(
    loglik: Callable[[np.ndarray], float],
    x0,
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    newton_polish: int = 5,
) -> ModeFit:
    """Maximise ``loglik`` from ``x0`` and return the mode with its observed information.

    BFGS does the bulk of the work; a few Newton steps with the
    finite-difference Hessian then tighten the optimum.
    """

    def nll(x):
        v = loglik(x)
        return math.inf if not np.isfinite(v) else -v

    jac = None if grad is None else (lambda x: -grad(x))
    res = optimize.minimize(nll, np.asarray(x0, float), jac=jac, method="BFGS", options={"gtol": 1e-7, "maxiter": 2000})
    x = np.asarray(res.x, float)
    if not np.isfinite(res.fun):
        raise ConvergenceError("optimiser left the support")

    def gradient(x):
        if grad is not None:
            return grad(x)
        # central differences: forward ones leave an O(step) bias in the polished mode
        hs = 1e-5 * np.maximum(np.abs(x), 1.0)
        g = np.empty(x.size)
        for k in range(x.size):
            e = np.zeros(x.size)
            e[k] = hs[k]
            g[k] = (loglik(x + e) - loglik(x - e)) / (2.0 * hs[k])
        return g

    H = numerical_hessian(loglik, x)
    for _ in range(newton_polish):
        g = gradient(x)
        if np.max(np.abs(g)) < 1e-9:
            break
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        f0 = loglik(x)
        while t > 1e-4:
            xn = x + t * step
            fn = loglik(xn)
            if np.isfinite(fn) and fn >= f0 - 1e-12 * abs(f0):
                x = xn
                break
            t /= 2.0
        else:
            break
        H = numerical_hessian(loglik, x)
    Q = -H
    if not np.all(np.isfinite(Q)):
        raise ConvergenceError("non-finite Hessian at the optimum")
    Q, repaired = repair_information(Q)
    g = gradient(x)
    return ModeFit(x, Q, float(loglik(x)), float(np.linalg.norm(g)), repaired)


# ---------------------------------------------------------------------------
# point-process site likelihood in latent coordinates


def site_log_likelihood(eta, e: evt.ExceedanceSet) -> float:
    """``log L(psi, tau, phi | y)``: point-process log-likelihood plus ``log pi(phi)``."""
    psi, tau, phi = (float(v) for v in eta)
    if not (np.isfinite(psi) and np.isfinite(tau) and np.isfinite(phi)) or abs(psi + tau) > 700 or abs(psi) > 700:
        return -math.inf
    p = link_inverse(TransformedParameters(psi, tau, phi))
    if not -0.5 < p.xi < 0.5:
        return -math.inf
    ll = evt.ppp_log_likelihood(e, p)
    if ll == -math.inf:
        return ll
    return ll + phi_log_prior(phi)


def site_score(eta, e: evt.ExceedanceSet) -> np.ndarray:
    """Gradient of :func:`site_log_likelihood` in (psi, tau, phi)."""
    psi, tau, phi = (float(v) for v in eta)
    p = link_inverse(TransformedParameters(psi, tau, phi))
    g_mu, g_sigma, g_xi = evt.ppp_score(e, p)
    return np.array(
        [
            g_mu * p.mu + g_sigma * p.sigma,
            g_sigma * p.sigma,
            g_xi * h_inverse_derivative(phi) + phi_log_prior_grad(phi),
        ]
    )


def initial_eta(e: evt.ExceedanceSet, xi0: float = XI_START) -> np.ndarray:
    """Moment-based start: GP scale from the mean excess, mapped to the PP scale."""
    exc = e.exceedances - e.threshold
    n_u = e.count
    kappa = max(float(np.mean(exc)) * (1.0 - xi0), 1e-8 * max(abs(e.threshold), 1.0))
    r = (n_u / e.n_block) ** (-xi0)
    sigma = kappa / r
    mu = e.threshold - sigma / xi0 * (r - 1.0)
    if mu <= 0:
        # the link needs mu > 0; shrink toward the threshold
        mu = max(e.threshold, 1e-8) * 0.5
    return np.array([math.log(mu), math.log(sigma / mu), h(xi0)])


def fit_exceedances(
    e: evt.ExceedanceSet, x0=None, rng: Optional[np.random.Generator] = None, n_restarts: int = N_JITTER
) -> ModeFit:
    """Fit one exceedance set, retrying from jittered starts on failure."""
    start = initial_eta(e) if x0 is None else np.asarray(x0, float)
    lik = lambda x: site_log_likelihood(x, e)  # noqa: E731
    sc = lambda x: site_score(x, e)  # noqa: E731
    rng = rng if rng is not None else np.random.default_rng(0)
    last = None
    for attempt in range(n_restarts + 1):
        x_init = start if attempt == 0 else start + rng.normal(scale=0.1, size=3)
        if not np.isfinite(lik(x_init)):
            continue
        try:
            fit = gaussian_approximation(lik, x_init, grad=sc)
        except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
            last = exc
            continue
        scale = np.sqrt(np.abs(np.diag(np.linalg.inv(fit.info))))
        if np.max(np.abs(sc(fit.mode)) * scale) < GRAD_TOL:
            return fit
        last = ConvergenceError(f"gradient norm {fit.grad_norm:.3g} above tolerance")
    raise ConvergenceError(f"no convergence after {n_restarts} restarts: {last}")


def fit_site(
    series: SiteSeries,
    q: float = 0.75,
    n_block: float = 1.0,
    min_exceedances: int = 15,
    check_starts: bool = False,
) -> SiteFit:
    """Max step at one site.

    Raises :class:`TooFewExceedancesError` below ``min_exceedances`` and
    :class:`ConvergenceError` when the optimiser fails from every start.
    With ``check_starts`` the fit is repeated from jittered initial values and
    flagged if the optima disagree by more than ``1e-4``.
    """
    values = series.values
    if not np.all(np.isfinite(values)):
        raise InvalidInputError(f"site {series.site_id}: non-finite values")
    if not n_block > 0:
        raise InvalidInputError("n_block must be positive")
    u = select_threshold(values, q)
    e = evt.ExceedanceSet.from_series(values[values > 0], u, n_block)
    # the replicate count includes zeros even though they never exceed u
    e = evt.ExceedanceSet(u, e.exceedances, values.size, n_block)
    if e.count < min_exceedances:
        raise TooFewExceedancesError(
            f"site {series.site_id}: {e.count} exceedances < minimum {min_exceedances}"
        )
    rng = np.random.default_rng([int(series.site_id) & 0xFFFFFFFF, 17])
    fit = fit_exceedances(e, rng=rng)
    flagged = fit.repaired
    if check_starts:
        for _ in range(N_JITTER):
            x0 = fit.mode + rng.normal(scale=0.2, size=3)
            try:
                other = fit_exceedances(e, x0=x0, rng=rng, n_restarts=0)
            except ExlgmError:
                flagged = True
                continue
            if np.max(np.abs(other.mode - fit.mode)) > JITTER_AGREEMENT:
                flagged = True
    if flagged:
        log.warning("site %s flagged (repaired information or unstable optimum)", series.site_id)
    return SiteFit(
        site_id=int(series.site_id),
        eta_hat=TransformedParameters(*fit.mode),
        info=fit.info,
        n_exceedances=e.count,
        threshold=u,
        lon=float(series.lon),
        lat=float(series.lat),
        flagged=flagged,
        n_block=float(n_block),
    )


def fit_all_sites(dataset, q: float = 0.75, n_block: float = 1.0, min_exceedances: int = 15):
    """Fit every site independently; returns ``(fits, exclusions)``.

    Fits come back sorted by ``site_id`` whatever the input order.  Only when
    every site fails is an error raised.
    """
    fits, report = [], ExclusionReport()
    for series in sorted(dataset.iter_series(), key=lambda s: s.site_id):
        try:
            fits.append(fit_site(series, q, n_block, min_exceedances))
        except (DegenerateSiteError, ConvergenceError) as exc:
            report.add(series, f"{type(exc).__name__}: {exc}")
    if not fits:
        raise DegenerateSiteError("every site was excluded")
    return fits, report


# ---------------------------------------------------------------------------
# diagnostics


def likelihood_profile_discrepancy(loglik, mode, info, grid_halfwidth: float = 4.0, n_grid: int = 401):
    """Sup-distance between normalised likelihood slices and their Gaussian approximations.

    For each coordinate ``k`` the others are held at ``mode``; the slice is
    evaluated on ``mode_k +/- grid_halfwidth / sqrt(info_kk)``.  Both curves
    are normalised to unit area on the grid and the result is the largest
    absolute difference divided by the Gaussian peak height.
    """
    mode = np.asarray(mode, float)
    out = np.empty(mode.size)
    for k in range(mode.size):
        sd = 1.0 / math.sqrt(info[k, k])
        grid = mode[k] + np.linspace(-grid_halfwidth, grid_halfwidth, n_grid) * sd
        ll = np.empty(n_grid)
        for i, g in enumerate(grid):
            x = mode.copy()
            x[k] = g
            ll[i] = loglik(x)
        true = np.exp(ll - np.max(ll[np.isfinite(ll)]))
        true[~np.isfinite(ll)] = 0.0
        true /= trapezoid(true, grid)
        approx = np.exp(-0.5 * ((grid - mode[k]) / sd) ** 2)
        approx /= trapezoid(approx, grid)
        out[k] = np.max(np.abs(true - approx)) / np.max(approx)
    return out


def gaussian_likelihood_check(series: SiteSeries, fit: SiteFit, grid_halfwidth: float = 4.0):
    """Per-coordinate (psi, tau, phi) discrepancy of the Gaussian approximation at one site."""
    values = series.values
    e = evt.ExceedanceSet(fit.threshold, values[values > fit.threshold], values.size, fit.n_block)
    return likelihood_profile_discrepancy(
        lambda x: site_log_likelihood(x, e), fit.eta_hat.as_array(), fit.info, grid_halfwidth
    )
