"""Prior densities: shape priors, PC priors for the latent hyperparameters."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
from scipy.special import betaln

from .errors import InvalidInputError
from .link import A_PHI, B_PHI, C_PHI, h_inverse_derivative

_LOG_B44 = float(betaln(4.0, 4.0))

# default tail conventions for the PC-prior rates
NUGGET_TAIL = (1.0, 0.05)  # P(sigma > 1) = 0.05
MATERN_SD_TAIL = (2.0, 0.05)  # P(s > 2) = 0.05
RANGE_FRACTION = 0.1  # P(rho < diameter/10) = 0.05
RANGE_TAIL_PROB = 0.05


def beta_shape_log_prior(xi: float) -> float:
    """Log density of Beta(4, 4) shifted to (-0.5, 0.5)."""
    if not (-0.5 < xi < 0.5):
        return -math.inf
    # (xi + 1/2)(1/2 - xi) = (1 - 4 xi^2)/4, written in xi^2 so the density is exactly even
    return 3.0 * (math.log1p(-4.0 * xi * xi) - math.log(4.0)) - _LOG_B44


def phi_log_prior(phi):
    """Log density induced on ``phi = h(xi)`` by the Beta(4, 4) shape prior."""
    phi = np.asarray(phi, dtype=float)
    v = (phi - A_PHI) / B_PHI
    log_x, log_1mx = _log_shape_coords(v)
    with np.errstate(over="ignore"):
        out = (
            (4.0 - C_PHI) * log_x
            + 3.0 * log_1mx
            + v
            - np.exp(v)
            - _LOG_B44
            - math.log(B_PHI * C_PHI)
        )
    return float(out) if np.ndim(out) == 0 else out


def _log_shape_coords(v):
    """``log(x)`` and ``log(1 - x)`` for ``x = xi + 1/2`` at ``v = (phi - a)/b``.

    Evaluated without forming ``x`` so both tails stay finite.
    """
    v = np.asarray(v, dtype=float)
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        ev = np.exp(v)
        # log(1 - exp(-e^v)), asymptotically v for v -> -inf
        log_base = np.where(v < -30.0, v - ev / 2.0, np.log(-np.expm1(-ev)))
        log_x = log_base / C_PHI
        # log(1 - x), asymptotically -e^v - log(c) for v -> +inf
        log_1mx = np.where(
            v > 3.0,
            -ev - math.log(C_PHI),
            np.log(-np.expm1(log_x)),
        )
    return log_x, log_1mx


def phi_log_prior_grad(phi: float) -> float:
    v = (phi - A_PHI) / B_PHI
    x = math.exp(float(_log_shape_coords(v)[0]))
    return ((4.0 - C_PHI) / x - 3.0 / (1.0 - x)) * h_inverse_derivative(phi) + (
        1.0 - math.exp(v)
    ) / B_PHI


def pc_prior_nugget_log(sigma: float, lam: float) -> float:
    """Exponential PC prior for a nugget standard deviation."""
    if lam <= 0:
        raise InvalidInputError("rate must be positive")
    if not sigma > 0:
        return -math.inf
    return math.log(lam) - lam * sigma


def pc_prior_matern_log(s: float, rho: float, lambda_s: float, lambda_rho: float) -> float:
    """Joint PC prior for the marginal SD ``s`` and range ``rho`` of a 2-D Matérn field."""
    if lambda_s <= 0 or lambda_rho <= 0:
        raise InvalidInputError("rates must be positive")
    if not (s > 0 and rho > 0):
        return -math.inf
    return (
        math.log(lambda_s)
        + math.log(lambda_rho)
        - 2.0 * math.log(rho)
        - lambda_s * s
        - lambda_rho / rho
    )


def calibrate_rate_from_tail(u0: float, alpha: float) -> float:
    """Rate with ``P(X > u0) = alpha`` for ``X ~ Exponential(rate)``."""
    if not (u0 > 0 and math.isfinite(u0)) or not (0 < alpha < 1):
        raise InvalidInputError("need u0 > 0 and 0 < alpha < 1")
    return -math.log(alpha) / u0


def calibrate_range_rate(rho0: float, alpha: float) -> float:
    """Range rate with ``P(rho < rho0) = alpha`` under the Matérn PC prior."""
    if not (rho0 > 0 and math.isfinite(rho0)) or not (0 < alpha < 1):
        raise InvalidInputError("need rho0 > 0 and 0 < alpha < 1")
    return -math.log(alpha) * rho0


@dataclass
class PriorConfig:
    """Rates of the hyperparameter priors and the intercept prior variance.

    ``None`` rates are filled by :meth:`resolved` from the default tail
    conventions; the range rates need the domain diameter.
    """

    lambda_sigma_psi: Optional[float] = None
    lambda_sigma_tau: Optional[float] = None
    lambda_sigma_phi: Optional[float] = None
    lambda_s_psi: Optional[float] = None
    lambda_rho_psi: Optional[float] = None
    lambda_s_tau: Optional[float] = None
    lambda_rho_tau: Optional[float] = None
    sigma_beta_sq: float = 100.0**2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not (v > 0 and math.isfinite(v)):
                raise InvalidInputError(f"{f.name} must be strictly positive")

    def resolved(self, domain_diameter: Optional[float] = None) -> "PriorConfig":
        nug = calibrate_rate_from_tail(*NUGGET_TAIL)
        sd = calibrate_rate_from_tail(*MATERN_SD_TAIL)
        rng = None
        if self.lambda_rho_psi is None or self.lambda_rho_tau is None:
            if domain_diameter is None:
                raise InvalidInputError("domain diameter needed to default the range rates")
            rng = calibrate_range_rate(RANGE_FRACTION * domain_diameter, RANGE_TAIL_PROB)

        def pick(v, default):
            return default if v is None else v

        return PriorConfig(
            lambda_sigma_psi=pick(self.lambda_sigma_psi, nug),
            lambda_sigma_tau=pick(self.lambda_sigma_tau, nug),
            lambda_sigma_phi=pick(self.lambda_sigma_phi, nug),
            lambda_s_psi=pick(self.lambda_s_psi, sd),
            lambda_rho_psi=pick(self.lambda_rho_psi, rng),
            lambda_s_tau=pick(self.lambda_s_tau, sd),
            lambda_rho_tau=pick(self.lambda_rho_tau, rng),
            sigma_beta_sq=self.sigma_beta_sq,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def hyper_log_prior(theta, prior: PriorConfig) -> float:
    """Log prior of ``theta = (sigma_psi, s_psi, rho_psi, sigma_tau, s_tau, rho_tau, sigma_phi)``."""
    sp, s_psi, r_psi, st, s_tau, r_tau, sf = (float(t) for t in theta)
    return (
        pc_prior_nugget_log(sp, prior.lambda_sigma_psi)
        + pc_prior_matern_log(s_psi, r_psi, prior.lambda_s_psi, prior.lambda_rho_psi)
        + pc_prior_nugget_log(st, prior.lambda_sigma_tau)
        + pc_prior_matern_log(s_tau, r_tau, prior.lambda_s_tau, prior.lambda_rho_tau)
        + pc_prior_nugget_log(sf, prior.lambda_sigma_phi)
    )
