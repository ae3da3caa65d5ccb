"""Gaussian-Gaussian pseudo model (the "Smooth" step).

The sitewise estimates are treated as data, ``eta_hat | eta ~ N(eta, Q_data^-1)``,
with the latent model ``eta = Z nu + eps``.  Given the hyperparameters the
joint vector ``x = (eta, nu)`` is Gaussian, so the marginal posterior of
the seven hyperparameters is available up to a constant and is explored by
random-walk Metropolis on the log scale; latent draws are exact Gibbs
draws from the conditional Gaussian.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import optimize

from .cholesky import LinearPattern, SparseCholesky
from .errors import InvalidInputError, NotPositiveDefiniteError
from .gmrf import MaternPrecision, Mesh
from .maxstep import numerical_hessian
from .priors import PriorConfig, hyper_log_prior

log = logging.getLogger(__name__)

THETA_NAMES = ("sigma_psi", "s_psi", "rho_psi", "sigma_tau", "s_tau", "rho_tau", "sigma_phi")
LOG_2PI = math.log(2.0 * math.pi)
TARGET_ACCEPTANCE = 0.23
LOW_ACCEPTANCE = 0.01


@dataclass(frozen=True)
class HyperParameters:
    sigma_psi: float
    s_psi: float
    rho_psi: float
    sigma_tau: float
    s_tau: float
    rho_tau: float
    sigma_phi: float

    def __post_init__(self):
        for name in THETA_NAMES:
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvalidInputError(f"{name} must be positive and finite, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in THETA_NAMES], dtype=float)

    @classmethod
    def from_array(cls, a) -> "HyperParameters":
        a = np.asarray(a, dtype=float).ravel()
        if a.size != 7:
            raise InvalidInputError("theta needs 7 components")
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class LatentState:
    """``eta`` stacks (psi, tau, phi) site blocks; ``nu = (beta_psi, u_psi, beta_tau, u_tau, beta_phi)``."""

    eta: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        if eta.ndim != 1 or eta.size % 3 or eta.size == 0:
            raise InvalidInputError("eta must have length 3N")
        if nu.ndim != 1 or nu.size < 5 or (nu.size - 3) % 2:
            raise InvalidInputError("nu must have length 3 + 2M")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "nu", nu)

    @property
    def n_sites(self) -> int:
        return self.eta.size // 3

    @property
    def n_mesh(self) -> int:
        return (self.nu.size - 3) // 2

    @property
    def beta(self) -> np.ndarray:
        m = self.n_mesh
        return self.nu[[0, m + 1, 2 * m + 2]]


@dataclass
class ChainConfig:
    """MCMC settings.

    ``proposal_scales`` gives per-component random-walk SDs on the log
    scale; when omitted the proposal covariance comes from the curvature of
    the log marginal posterior at its approximate mode.  Zero scales freeze
    the corresponding component.
    """

    n_iterations: int = 10000
    n_burnin: int = 2000
    thin: int = 1
    seed: int = 0
    proposal_scales: Optional[Sequence[float]] = None
    adapt: bool = True
    theta_init: Optional[Sequence[float]] = None
    init_evaluations: int = 700

    def __post_init__(self):
        if self.n_iterations < 1 or self.n_burnin < 0 or self.n_burnin >= self.n_iterations:
            raise InvalidInputError("need 0 <= n_burnin < n_iterations")
        if self.thin < 1:
            raise InvalidInputError("thin must be >= 1")
        if self.init_evaluations < 0:
            raise InvalidInputError("init_evaluations must be nonnegative")
        if self.proposal_scales is not None:
            s = np.asarray(self.proposal_scales, dtype=float)
            if s.shape != (7,) or np.any(~np.isfinite(s)) or np.any(s < 0):
                raise InvalidInputError("proposal_scales needs 7 nonnegative values")
        if self.theta_init is not None:
            HyperParameters.from_array(self.theta_init)

    @property
    def n_kept(self) -> int:
        return -(-(self.n_iterations - self.n_burnin) // self.thin)

    def to_dict(self) -> dict:
        return {
            "n_iterations": self.n_iterations,
            "n_burnin": self.n_burnin,
            "thin": self.thin,
            "seed": self.seed,
            "proposal_scales": None if self.proposal_scales is None else list(map(float, self.proposal_scales)),
            "adapt": self.adapt,
            "theta_init": None if self.theta_init is None else list(map(float, self.theta_init)),
            "init_evaluations": self.init_evaluations,
        }


@dataclass
class PosteriorSamples:
    theta_draws: np.ndarray
    latent_draws: np.ndarray
    acceptance_rate: float
    seed: int
    n_sites: int
    n_mesh: int
    warnings: list = field(default_factory=list)

    def eta_block(self, k: int) -> np.ndarray:
        """Draws of block ``k`` (0: psi, 1: tau, 2: phi), shape (draws, N)."""
        n = self.n_sites
        return self.latent_draws[:, k * n : (k + 1) * n]

    @property
    def beta_draws(self) -> np.ndarray:
        n, m = self.n_sites, self.n_mesh
        off = 3 * n
        return self.latent_draws[:, [off, off + m + 1, off + 2 * m + 2]]

    def as_matrix(self) -> np.ndarray:
        """Draw matrix with the 7 hyperparameter columns first, then the latent columns."""
        return np.hstack([self.theta_draws, self.latent_draws])

    @classmethod
    def from_matrix(cls, mat, n_sites, n_mesh, acceptance_rate=math.nan, seed=0) -> "PosteriorSamples":
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[1] != 7 + 3 * n_sites + 3 + 2 * n_mesh:
            raise InvalidInputError("draw matrix has the wrong number of columns")
        return cls(mat[:, :7].copy(), mat[:, 7:].copy(), acceptance_rate, seed, n_sites, n_mesh)

    def summary(self) -> dict:
        def row(name, x):
            q = np.quantile(x, [0.025, 0.5, 0.975])
            return {
                "name": name,
                "mean": float(np.mean(x)),
                "sd": float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
                "q025": float(q[0]),
                "q50": float(q[1]),
                "q975": float(q[2]),
            }

        b = self.beta_draws
        return {
            "hyperparameters": [row(n, self.theta_draws[:, k]) for k, n in enumerate(THETA_NAMES)],
            "intercepts": [row(n, b[:, k]) for k, n in enumerate(("beta_psi", "beta_tau", "beta_phi"))],
            "acceptance_rate": float(self.acceptance_rate),
            "n_draws": int(self.theta_draws.shape[0]),
            "seed": int(self.seed),
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# model assembly


def assemble_design(N: int, A) -> sp.csr_matrix:
    """``Z`` mapping ``nu`` to the stacked (psi, tau, phi) site values."""
    A = sp.csr_matrix(A)
    if A.shape[0] != N:
        raise InvalidInputError(f"projection has {A.shape[0]} rows, expected {N}")
    one = sp.csr_matrix(np.ones((N, 1)))
    return sp.bmat(
        [
            [one, A, None, None, None],
            [None, None, one, A, None],
            [None, None, None, None, one],
        ],
        format="csr",
    )


def _eps_precision(theta: HyperParameters, N: int) -> np.ndarray:
    return np.repeat([theta.sigma_psi**-2, theta.sigma_tau**-2, theta.sigma_phi**-2], N)


def _nu_precision(theta: HyperParameters, Q_psi, Q_tau, sigma_beta_sq: float) -> sp.csc_matrix:
    b = sp.csr_matrix([[1.0 / sigma_beta_sq]])
    return sp.block_diag(
        [b, Q_psi / theta.s_psi**2, b, Q_tau / theta.s_tau**2, b], format="csc"
    )


@dataclass
class FullConditional:
    """``x = (eta, nu) | eta_hat, theta ~ N(mean, Q^-1)`` with its factorization."""

    mean: np.ndarray
    Q: sp.csc_matrix
    factor: SparseCholesky
    n_sites: int

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.Q.toarray())


def _posterior_precision(Q_data, q_eps, Z, Q_nu) -> sp.csc_matrix:
    D = sp.diags(q_eps)
    DZ = D @ Z
    return sp.bmat([[Q_data + D, -DZ], [-DZ.T, Z.T @ DZ + Q_nu]], format="csc")


def _full_conditional(eta_hat, Q_data, q_eps, Z, Q_nu, ordering=None) -> FullConditional:
    Q = _posterior_precision(Q_data, q_eps, Z, Q_nu)
    fac = SparseCholesky(Q, ordering=ordering)
    rhs = np.concatenate([Q_data @ eta_hat, np.zeros(Z.shape[1])])
    return FullConditional(fac.solve(rhs), Q, fac, Z.shape[0] // 3)


def latent_full_conditional(eta_hat, Q_data, theta: HyperParameters, Z, Q_rho_psi, Q_rho_tau, prior: PriorConfig):
    """Gaussian full conditional of ``(eta, nu)`` given the hyperparameters."""
    eta_hat = np.asarray(eta_hat, dtype=float)
    Z = sp.csr_matrix(Z)
    N = Z.shape[0] // 3
    if eta_hat.shape != (3 * N,) or Q_data.shape != (3 * N, 3 * N):
        raise InvalidInputError("eta_hat / Q_data do not match Z")
    Q_nu = _nu_precision(theta, Q_rho_psi, Q_rho_tau, prior.sigma_beta_sq)
    try:
        return _full_conditional(eta_hat, sp.csr_matrix(Q_data), _eps_precision(theta, N), Z, Q_nu)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(f"{exc} at theta={theta.as_array().tolist()}") from exc


def gibbs_draw_latent(fc: FullConditional, rng: np.random.Generator, z=None) -> LatentState:
    """Exact draw from the full conditional; ``z`` overrides the standard-normal input."""
    if z is None:
        z = rng.standard_normal(fc.mean.size)
    x = fc.mean + fc.factor.solve_lt(z)
    n3 = 3 * fc.n_sites
    return LatentState(x[:n3], x[n3:])


def data_precision(infos) -> sp.csr_matrix:
    """Block precision of the stacked (psi..., tau..., phi...) estimates from 3x3 site infos."""
    infos = np.asarray(infos, dtype=float)
    N = infos.shape[0]
    rows, cols, vals = [], [], []
    idx = np.arange(N)
    for a in range(3):
        for b in range(3):
            rows.append(a * N + idx)
            cols.append(b * N + idx)
            vals.append(infos[:, a, b])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * N, 3 * N)
    )


def stack_estimates(fits) -> tuple:
    """``(eta_hat, Q_data)`` in stacked block order from a list of site fits."""
    eta = np.array([f.eta_hat.as_array() for f in fits])
    return eta.T.ravel(), data_precision([f.info for f in fits])


class SmoothModel:
    """Pseudo model with cached structure; evaluates and samples for any ``theta``."""

    def __init__(self, eta_hat, Q_data, Z, mesh: Mesh, prior: PriorConfig):
        self.Z = sp.csr_matrix(Z)
        self.N = self.Z.shape[0] // 3
        self.mesh = mesh
        self.M = mesh.n_nodes
        if self.Z.shape != (3 * self.N, 3 + 2 * self.M):
            raise InvalidInputError("Z does not match the mesh")
        self.eta_hat = np.asarray(eta_hat, dtype=float)
        if self.eta_hat.shape != (3 * self.N,):
            raise InvalidInputError("eta_hat must have length 3N")
        self.Q_data = sp.csr_matrix(Q_data)
        if self.Q_data.shape != (3 * self.N, 3 * self.N):
            raise InvalidInputError("Q_data must be 3N x 3N")
        self.prior = prior.resolved(mesh.diameter)
        self.matern = MaternPrecision(mesh)
        self._data_factor = SparseCholesky(self.Q_data)
        self._post = LinearPattern(self._posterior_components())
        self._rhs = np.concatenate([self.Q_data @ self.eta_hat, np.zeros(3 + 2 * self.M)])

    def _posterior_components(self):
        """Fixed pieces of the joint precision of ``(eta, nu)``; see :meth:`_posterior_coefficients`."""
        N, M = self.N, self.M
        n3, k = 3 * N, 3 + 2 * M
        Z = self.Z.tocsr()
        comps = [sp.block_diag([self.Q_data, sp.csr_matrix((k, k))], format="csc")]
        for l in range(3):
            d = np.zeros(n3)
            d[l * N : (l + 1) * N] = 1.0
            D = sp.diags(d)
            DZ = D @ Z
            comps.append(sp.bmat([[D, -DZ], [-DZ.T, Z.T @ DZ]], format="csc"))
        beta = np.zeros(n3 + k)
        beta[[n3, n3 + M + 1, n3 + 2 * M + 2]] = 1.0
        comps.append(sp.diags(beta, format="csc"))
        for offset in (n3 + 1, n3 + M + 2):
            for B in self.matern.components:
                comps.append(
                    sp.block_diag(
                        [sp.csr_matrix((offset, offset)), B, sp.csr_matrix((n3 + k - offset - M, n3 + k - offset - M))],
                        format="csc",
                    )
                )
        return comps

    def _posterior_coefficients(self, theta: HyperParameters) -> np.ndarray:
        return np.concatenate(
            [
                [1.0, theta.sigma_psi**-2, theta.sigma_tau**-2, theta.sigma_phi**-2, 1.0 / self.prior.sigma_beta_sq],
                self.matern.coefficients(theta.rho_psi) / theta.s_psi**2,
                self.matern.coefficients(theta.rho_tau) / theta.s_tau**2,
            ]
        )

    # -- pieces ---------------------------------------------------------
    def _nu_quadratic(self, theta: HyperParameters, nu) -> float:
        """``nu' Q_nu nu`` without assembling ``Q_nu``."""
        M = self.M
        u_psi, u_tau = nu[1 : M + 1], nu[M + 2 : 2 * M + 2]
        b = nu[[0, M + 1, 2 * M + 2]]
        return (
            float(b @ b) / self.prior.sigma_beta_sq
            + float(u_psi @ (self.matern(theta.rho_psi) @ u_psi)) / theta.s_psi**2
            + float(u_tau @ (self.matern(theta.rho_tau) @ u_tau)) / theta.s_tau**2
        )

    def full_conditional(self, theta: HyperParameters) -> tuple:
        """Returns ``(FullConditional, logdet Q_nu)``."""
        f_psi = self.matern.factor(theta.rho_psi)
        f_tau = self.matern.factor(theta.rho_tau)
        M = self.M
        logdet_nu = (
            -3.0 * math.log(self.prior.sigma_beta_sq)
            + f_psi.logdet() - 2.0 * M * math.log(theta.s_psi)
            + f_tau.logdet() - 2.0 * M * math.log(theta.s_tau)
        )
        coefs = self._posterior_coefficients(theta)
        fac = self._post.factor(coefs)
        fc = FullConditional(fac.solve(self._rhs), self._post.matrix(coefs), fac, self.N)
        return fc, logdet_nu

    def log_marginal_likelihood(self, theta: HyperParameters, x_star=None, _cache=None) -> float:
        """``log pi(eta_hat | theta)`` via the Gaussian identity at ``x_star`` (default: the conditional mean)."""
        fc, logdet_nu = self.full_conditional(theta) if _cache is None else _cache
        n3 = 3 * self.N
        x = fc.mean if x_star is None else np.asarray(x_star, dtype=float)
        eta, nu = x[:n3], x[n3:]
        q_eps = _eps_precision(theta, self.N)
        r_eps = eta - self.Z @ nu
        r_dat = self.eta_hat - eta
        r_post = x - fc.mean
        k = nu.size
        log_prior = (
            -0.5 * k * LOG_2PI + 0.5 * logdet_nu - 0.5 * self._nu_quadratic(theta, nu)
            - 0.5 * n3 * LOG_2PI + 0.5 * float(np.sum(np.log(q_eps))) - 0.5 * float(r_eps @ (q_eps * r_eps))
        )
        log_lik = (
            -0.5 * n3 * LOG_2PI + 0.5 * self._data_factor.logdet() - 0.5 * float(r_dat @ (self.Q_data @ r_dat))
        )
        quad_post = 0.0 if x_star is None else float(r_post @ (fc.Q @ r_post))
        log_post = -0.5 * x.size * LOG_2PI + 0.5 * fc.factor.logdet() - 0.5 * quad_post
        return log_prior + log_lik - log_post

    def log_marginal_hyper(self, theta, x_star=None) -> float:
        """``log pi(theta) + log pi(eta_hat | theta)``; ``-inf`` where a factorization fails."""
        return self._evaluate(theta, x_star)[0]

    def _evaluate(self, theta, x_star=None):
        if not isinstance(theta, HyperParameters):
            a = np.asarray(theta, dtype=float)
            if a.shape != (7,) or np.any(~np.isfinite(a)) or np.any(a <= 0):
                return -math.inf, None
            theta = HyperParameters.from_array(a)
        try:
            cache = self.full_conditional(theta)
        except NotPositiveDefiniteError:
            return -math.inf, None
        value = hyper_log_prior(theta.as_array(), self.prior) + self.log_marginal_likelihood(
            theta, x_star, _cache=cache
        )
        if not math.isfinite(value):
            return -math.inf, None
        return value, cache[0]

    # -- chain ----------------------------------------------------------
    def default_theta_init(self) -> np.ndarray:
        """Crude moment-based starting values from the spread of the estimates."""
        N = self.N
        sds = [max(float(np.std(self.eta_hat[k * N : (k + 1) * N])), 1e-3) for k in range(3)]
        rho0 = 0.2 * self.mesh.diameter
        return np.array(
            [0.5 * sds[0], sds[0], rho0, 0.5 * sds[1], sds[1], rho0, sds[2]], dtype=float
        )

    def find_mode(self, theta0, n_evaluations: int) -> np.ndarray:
        """Approximate posterior mode of ``log theta`` with a fixed evaluation budget.

        Tolerances are zero so the optimiser always spends the full budget;
        the work is then the same whatever data produced the estimates.
        """
        x0 = np.log(np.asarray(theta0, dtype=float))
        if n_evaluations == 0:
            return x0

        def neg(x):
            v = self._evaluate(np.exp(x))[0] + float(np.sum(x))
            return 1e300 if not math.isfinite(v) else -v

        res = optimize.minimize(
            neg,
            x0,
            method="Nelder-Mead",
            options={"maxfev": n_evaluations, "maxiter": n_evaluations, "xatol": 0.0, "fatol": 0.0},
        )
        return res.x if neg(res.x) <= neg(x0) else x0

    def proposal_cholesky(self, x_mode) -> np.ndarray:
        """Cholesky factor of the random-walk covariance ``2.38^2/7 * H^-1`` at ``x_mode``."""

        def target(x):
            v = self._evaluate(np.exp(x))[0] + float(np.sum(x))
            return v if math.isfinite(v) else -1e300

        H = -numerical_hessian(target, x_mode, rel_step=0.02)
        if not np.all(np.isfinite(H)) or np.max(np.abs(H)) > 1e200:
            return np.eye(7) * 0.1
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        # proposal SD in every eigendirection kept between 1e-3 and 1 on the log scale
        w = np.clip(w, 1.0, 1e6)
        cov = (V / w) @ V.T * (2.38**2 / 7.0)
        return np.linalg.cholesky(0.5 * (cov + cov.T))

    def run_chain(self, cfg: ChainConfig) -> PosteriorSamples:
        rng = np.random.default_rng(cfg.seed)
        theta0 = np.asarray(cfg.theta_init, dtype=float) if cfg.theta_init is not None else self.default_theta_init()
        if cfg.proposal_scales is None:
            x = self.find_mode(theta0, cfg.init_evaluations)
            L = self.proposal_cholesky(x)
        else:
            x = np.log(theta0)
            L = np.diag(np.asarray(cfg.proposal_scales, dtype=float))
        frozen = not np.any(L)

        value, fc = self._evaluate(np.exp(x))
        if not math.isfinite(value):
            raise NotPositiveDefiniteError(f"initial theta {np.exp(x).tolist()} has zero posterior density")
        current = value + float(np.sum(x))

        n_kept = cfg.n_kept
        n_latent = 3 * self.N + 3 + 2 * self.M
        theta_out = np.empty((n_kept, 7))
        latent_out = np.empty((n_kept, n_latent))
        log_scale = 0.0
        accepted = 0
        proposals = 0
        k = 0
        for it in range(cfg.n_iterations):
            if not frozen:
                z = rng.standard_normal(7)
                xp = x + math.exp(log_scale) * (L @ z)
                vp, fcp = self._evaluate(np.exp(xp))
                proposed = vp + float(np.sum(xp)) if math.isfinite(vp) else -math.inf
                log_u = math.log(rng.random())
                alpha = 0.0 if not math.isfinite(proposed) else min(1.0, math.exp(min(0.0, proposed - current)))
                if math.isfinite(proposed) and log_u < proposed - current:
                    x, current, fc = xp, proposed, fcp
                    if it >= cfg.n_burnin:
                        accepted += 1
                if it >= cfg.n_burnin:
                    proposals += 1
                elif cfg.adapt:
                    log_scale += (alpha - TARGET_ACCEPTANCE) / (it + 1) ** 0.6
            if it >= cfg.n_burnin and (it - cfg.n_burnin) % cfg.thin == 0:
                draw = gibbs_draw_latent(fc, rng)
                theta_out[k] = np.exp(x)
                latent_out[k, : 3 * self.N] = draw.eta
                latent_out[k, 3 * self.N :] = draw.nu
                k += 1
        rate = 1.0 if frozen else accepted / max(proposals, 1)
        warnings = []
        if rate < LOW_ACCEPTANCE:
            msg = f"acceptance rate {rate:.4f} below {LOW_ACCEPTANCE}"
            log.warning(msg)
            warnings.append(msg)
        return PosteriorSamples(theta_out, latent_out, rate, cfg.seed, self.N, self.M, warnings)


def log_marginal_hyper(theta, eta_hat, Q_data, Z, mesh: Mesh, prior: PriorConfig) -> float:
    return SmoothModel(eta_hat, Q_data, Z, mesh, prior).log_marginal_hyper(theta)


def run_chain(eta_hat, Q_data, Z, mesh: Mesh, prior: PriorConfig, cfg: ChainConfig) -> PosteriorSamples:
    return SmoothModel(eta_hat, Q_data, Z, mesh, prior).run_chain(cfg)
