"""Multivariate link between (mu, sigma, xi) and the latent coordinates (psi, tau, phi).

``psi = log(mu)``, ``tau = log(sigma / mu)`` and ``phi = h(xi)`` where ``h``
maps the shape range (-0.5, 0.5) onto the real line and is close to the
identity around zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .evt import PPParameters

# Published (rounded) constants of the shape transform.
C_PHI = 0.8
B_PHI = 0.39563
A_PHI = 0.062376


@dataclass(frozen=True)
class TransformedParameters:
    psi: float
    tau: float
    phi: float

    def __post_init__(self):
        for name in ("psi", "tau", "phi"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.tau, self.phi])


def h(xi):
    """Shape transform ``phi = h(xi)``, strictly increasing on (-0.5, 0.5)."""
    xi = np.asarray(xi, dtype=float)
    if np.any(~np.isfinite(xi)) or np.any((xi <= -0.5) | (xi >= 0.5)):
        raise InvalidInputError("xi must lie in the open interval (-0.5, 0.5)")
    out = A_PHI + B_PHI * np.log(-np.log1p(-((xi + 0.5) ** C_PHI)))
    return float(out) if out.ndim == 0 else out


def h_inverse(phi):
    """Inverse shape transform; the result lies in [-0.5, 0.5) in floating point."""
    phi = np.asarray(phi, dtype=float)
    if np.any(~np.isfinite(phi)):
        raise InvalidInputError("phi must be finite")
    with np.errstate(over="ignore"):
        v = np.exp((phi - A_PHI) / B_PHI)
    out = (-np.expm1(-v)) ** (1.0 / C_PHI) - 0.5
    return float(out) if out.ndim == 0 else out


def h_inverse_derivative(phi):
    """``d h^{-1} / d phi``."""
    phi = np.asarray(phi, dtype=float)
    v = (phi - A_PHI) / B_PHI
    with np.errstate(over="ignore", under="ignore"):
        ev = np.exp(v)
        base = -np.expm1(-ev)
        out = (base ** (1.0 / C_PHI - 1.0)) * np.exp(v - ev) / (C_PHI * B_PHI)
    return float(out) if out.ndim == 0 else out


def link_forward(p: PPParameters) -> TransformedParameters:
    if p.mu <= 0 or p.sigma <= 0:
        raise InvalidInputError("link requires mu > 0 and sigma > 0")
    return TransformedParameters(math.log(p.mu), math.log(p.sigma / p.mu), h(p.xi))


def link_inverse(t: TransformedParameters) -> PPParameters:
    return PPParameters(math.exp(t.psi), math.exp(t.psi + t.tau), h_inverse(t.phi))


def link_inverse_arrays(psi, tau, phi):
    """Vectorised inverse link returning ``(mu, sigma, xi)`` arrays."""
    psi = np.asarray(psi, dtype=float)
    return np.exp(psi), np.exp(psi + np.asarray(tau, dtype=float)), h_inverse(phi)
