"""Synthetic data: iid daily values whose block maxima are exactly GEV.

Each value is drawn from ``G^(1/B)`` where ``G`` is the GEV of block maxima
and ``B`` the block length, so the maximum of ``B`` values has law ``G``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .evt import gev_quantile_neglog
from .gmrf import Mesh, build_projection, gmrf_sample, MaternPrecision
from .io import Dataset
from .link import link_inverse_arrays
from .smooth import HyperParameters

DEFAULT_BETA = (2.65, -0.55, 0.097)
RETURN_PERIODS = (20.0, 50.0, 100.0)


@dataclass
class SimulationTruth:
    mu: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray
    block_size: float
    theta: np.ndarray | None = None
    beta: np.ndarray | None = None
    eta: np.ndarray | None = None  # (3, N): psi, tau, phi
    u_psi: np.ndarray | None = None
    u_tau: np.ndarray | None = None
    mesh: Mesh | None = None
    return_levels: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "block_size": self.block_size,
            "mu": arr(self.mu),
            "sigma": arr(self.sigma),
            "xi": arr(self.xi),
            "theta": arr(self.theta),
            "beta": arr(self.beta),
            "eta": arr(self.eta),
            "u_psi": arr(self.u_psi),
            "u_tau": arr(self.u_tau),
            "mesh": None if self.mesh is None else self.mesh.to_dict(),
            "return_levels": {str(k): arr(v) for k, v in self.return_levels.items()},
        }


def grid_sites(nx: int, ny: int, spacing: float = 1.0, origin=(0.0, 0.0)) -> np.ndarray:
    """Site coordinates of a regular ``nx`` by ``ny`` grid, row by row."""
    if nx < 1 or ny < 1 or not spacing > 0:
        raise InvalidInputError("grid needs positive size and spacing")
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    return np.column_stack([origin[0] + ix.ravel() * spacing, origin[1] + iy.ravel() * spacing])


def _true_return_levels(mu, sigma, xi, periods):
    return {
        float(M): gev_quantile_neglog(-np.log1p(-1.0 / M), mu, sigma, xi) for M in periods
    }


def simulate_fixed(coords, mu, sigma, xi, T: int, B: float, seed, clip: bool = True, site_ids=None):
    """Mode (a): ``T`` iid values per site from ``G^(1/B)`` by inverse transform.

    With ``clip`` negative draws are set to zero (dry days); exceedances of
    any positive threshold are unaffected.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    N = coords.shape[0]
    mu, sigma, xi = (np.broadcast_to(np.asarray(v, dtype=float), (N,)) for v in (mu, sigma, xi))
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    if not (B > 0 and np.isfinite(B)):
        raise InvalidInputError("block size must be positive")
    if np.any(~np.isfinite(mu)) or np.any(sigma <= 0) or np.any(~np.isfinite(sigma)):
        raise InvalidInputError("invalid location/scale")
    if np.any(~np.isfinite(xi)):
        raise InvalidInputError("invalid shape")
    rng = np.random.default_rng(seed)
    v = rng.random((N, T))
    v = np.clip(v, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    t = -B * np.log(v)
    y = gev_quantile_neglog(t, mu[:, None], sigma[:, None], xi[:, None])
    if clip:
        y = np.maximum(y, 0.0)
    ids = np.arange(N) if site_ids is None else np.asarray(site_ids)
    truth = SimulationTruth(
        mu.copy(), sigma.copy(), xi.copy(), float(B),
        return_levels=_true_return_levels(mu, sigma, xi, RETURN_PERIODS),
    )
    return Dataset(ids, coords[:, 0], coords[:, 1], y), truth


def simulate_generative(
    coords, mesh: Mesh, theta, T: int, B: float, seed, beta=DEFAULT_BETA, clip: bool = True
):
    """Mode (b): draw the latent fields and nuggets, map to (mu, sigma, xi), then mode (a)."""
    theta = theta if isinstance(theta, HyperParameters) else HyperParameters.from_array(theta)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (3,) or np.any(~np.isfinite(beta)):
        raise InvalidInputError("beta needs 3 finite values")
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    N = coords.shape[0]
    A = build_projection(mesh, coords)
    ss = np.random.SeedSequence(seed)
    latent_seed, data_seed = ss.spawn(2)
    rng = np.random.default_rng(latent_seed)
    mp = MaternPrecision(mesh)
    u_psi = gmrf_sample(mp.factor(theta.rho_psi), theta.s_psi, rng)
    u_tau = gmrf_sample(mp.factor(theta.rho_tau), theta.s_tau, rng)
    eps = rng.standard_normal((3, N)) * np.array([theta.sigma_psi, theta.sigma_tau, theta.sigma_phi])[:, None]
    eta = np.vstack(
        [beta[0] + A @ u_psi + eps[0], beta[1] + A @ u_tau + eps[1], beta[2] + eps[2]]
    )
    mu, sigma, xi = link_inverse_arrays(eta[0], eta[1], eta[2])
    ds, truth = simulate_fixed(coords, mu, sigma, xi, T, B, data_seed, clip=clip)
    truth.theta = theta.as_array()
    truth.beta = beta
    truth.eta = eta
    truth.u_psi = u_psi
    truth.u_tau = u_tau
    truth.mesh = mesh
    return ds, truth
