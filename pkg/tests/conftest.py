from dataclasses import dataclass

import numpy as np
import pytest
import scipy.sparse as sp

from exlgm.gmrf import Mesh, build_precision, build_projection
from exlgm.priors import PriorConfig
from exlgm.smooth import HyperParameters, assemble_design, data_precision


@dataclass
class Toy:
    mesh: Mesh
    coords: np.ndarray
    A: sp.csr_matrix
    Z: sp.csr_matrix
    eta_hat: np.ndarray
    infos: np.ndarray
    Q_data: sp.csr_matrix
    prior: PriorConfig
    theta: HyperParameters


def make_toy(seed=0, info_scale=1.0):
    rng = np.random.default_rng(seed)
    mesh = Mesh((0.0, 0.0), 2, 2, 1.0)
    coords = np.array([[0.2, 0.3], [0.7, 0.1], [0.5, 0.5], [0.9, 0.8]])
    A = build_projection(mesh, coords)
    N = 4
    infos = []
    for _ in range(N):
        B = rng.normal(size=(3, 3))
        infos.append(info_scale * (B @ B.T + 3 * np.eye(3)))
    infos = np.array(infos)
    eta_hat = np.concatenate([2.5 + 0.3 * rng.normal(size=N), -0.6 + 0.2 * rng.normal(size=N), 0.1 * rng.normal(size=N)])
    # a moderate intercept variance keeps the covariance-form oracle well conditioned
    prior = PriorConfig(sigma_beta_sq=4.0).resolved(mesh.diameter)
    theta = HyperParameters(0.2, 0.5, 1.2, 0.1, 0.3, 0.8, 0.15)
    return Toy(mesh, coords, A, assemble_design(N, A), eta_hat, infos, data_precision(infos), prior, theta)


def dense_oracle(toy: Toy, theta: HyperParameters):
    """Posterior of x = (eta, nu) and the marginal covariance of eta_hat, from covariances only."""
    N, M = 4, toy.mesh.n_nodes
    Sq = lambda rho, s: s**2 * np.linalg.inv(build_precision(toy.mesh, rho).toarray())  # noqa: E731
    sb = toy.prior.sigma_beta_sq
    blocks = [np.array([[sb]]), Sq(theta.rho_psi, theta.s_psi), np.array([[sb]]), Sq(theta.rho_tau, theta.s_tau), np.array([[sb]])]
    k = 3 + 2 * M
    S_nu = np.zeros((k, k))
    o = 0
    for b in blocks:
        S_nu[o : o + b.shape[0], o : o + b.shape[0]] = b
        o += b.shape[0]
    S_eps = np.diag(np.repeat([theta.sigma_psi**2, theta.sigma_tau**2, theta.sigma_phi**2], N))
    Z = toy.Z.toarray()
    P = np.block([[Z @ S_nu @ Z.T + S_eps, Z @ S_nu], [S_nu @ Z.T, S_nu]])
    R = np.linalg.inv(toy.Q_data.toarray())
    n3 = 3 * N
    H = np.hstack([np.eye(n3), np.zeros((n3, k))])
    S_y = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S_y)
    mean = K @ toy.eta_hat
    cov = P - K @ H @ P
    return mean, 0.5 * (cov + cov.T), S_y


@pytest.fixture
def toy():
    return make_toy()


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """``criterion(k, ok, detail)`` prints one pass/fail line and records it for the session summary."""

    def record(k, ok, detail):
        line = f"CRITERION {k:>2}: {'PASS' if ok else 'FAIL'} | {detail}"
        print(line)
        _ACCEPTANCE.append((k, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
