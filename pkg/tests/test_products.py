import math

import numpy as np
import pytest
from scipy import stats

from exlgm.errors import DegenerateSiteError, InvalidInputError
from exlgm.evt import PPParameters, gev_cdf, gev_return_level
from exlgm.gmrf import Mesh, build_precision, gmrf_sample
from exlgm.link import h
from exlgm.products import (
    PredictConfig,
    empirical_variogram,
    posterior_predictive_draws,
    predictive_draws_from_parameters,
    return_level_surface,
    write_predictive,
    write_return_levels,
    write_variogram,
)
from exlgm.smooth import PosteriorSamples

RL_GUMBEL_P01 = 4.600149226776580


def repeated_draw_samples(mu, sigma, xi, n_draws=5, n_sites=1, n_mesh=1):
    eta = np.concatenate([np.full(n_sites, math.log(mu)), np.full(n_sites, math.log(sigma / mu)), np.full(n_sites, h(xi))])
    latent = np.concatenate([eta, np.zeros(3 + 2 * n_mesh)])
    mat = np.hstack([np.ones((n_draws, 7)), np.tile(latent, (n_draws, 1))])
    return PosteriorSamples.from_matrix(mat, n_sites, n_mesh)


def test_degenerate_chain_return_level():
    # mu = 0 has no log-location, so the Gumbel case is shifted to mu = 1
    s = repeated_draw_samples(1.0, 1.0, 0.0)
    surf = return_level_surface(s, 100.0)
    assert surf.mean[0] - 1.0 == pytest.approx(RL_GUMBEL_P01, abs=1e-5)
    assert surf.sd[0] == 0.0
    assert surf.q025[0] == surf.q975[0] == surf.mean[0]


def test_return_level_matches_closed_form():
    s = repeated_draw_samples(10.0, 5.0, 0.1, n_sites=2)
    surf = return_level_surface(s, 50.0)
    z = gev_return_level(0.02, PPParameters(10.0, 5.0, 0.1))
    np.testing.assert_allclose(surf.mean, z, rtol=1e-12)


def test_return_level_monotone_in_period():
    rng = np.random.default_rng(0)
    mat = np.hstack([np.ones((50, 7)), np.column_stack([
        2.3 + 0.1 * rng.standard_normal((50, 3)),
        -0.6 + 0.05 * rng.standard_normal((50, 3)),
        0.1 * rng.standard_normal((50, 3)),
        np.zeros((50, 5)),
    ])])
    s = PosteriorSamples.from_matrix(mat, 3, 1)
    means = [return_level_surface(s, M).mean for M in (20, 50, 100)]
    assert np.all(means[0] < means[1]) and np.all(means[1] < means[2])
    with pytest.raises(InvalidInputError):
        return_level_surface(s, 1.0)


def test_predictive_conditional_median():
    B, u, n = 365.25, 3.0, 200_000
    rng = np.random.default_rng(1)
    y = predictive_draws_from_parameters(np.zeros(n), np.ones(n), np.zeros(n), u, B, rng)
    assert np.all(y > u)
    Fu = math.exp(-math.exp(-u) / B)
    q = (Fu + 1) / 2
    med = -math.log(-B * math.log(q))
    # density of the conditional law at the median
    F = lambda v: math.exp(-math.exp(-v) / B)  # noqa: E731
    f = F(med) * math.exp(-med) / B / (1 - Fu)
    se = math.sqrt(0.25 / n) / f
    assert abs(np.median(y) - med) < 3 * se


def test_predictive_b1_is_conditional_gev():
    p = PPParameters(2.0, 1.5, 0.2)
    u = 3.0
    n = 20_000
    y = predictive_draws_from_parameters(np.full(n, p.mu), np.full(n, p.sigma), np.full(n, p.xi), u, 1.0, np.random.default_rng(2))
    Gu = gev_cdf(u, p)
    cdf = lambda v: (gev_cdf(v, p) - Gu) / (1 - Gu)  # noqa: E731
    assert stats.kstest(y, cdf).pvalue > 0.01


def test_predictive_exceedance_probability():
    B, u, v = 365.25, 3.0, 4.5
    n = 100_000
    y = predictive_draws_from_parameters(np.zeros(n), np.ones(n), np.zeros(n), u, B, np.random.default_rng(3))
    F = lambda x: math.exp(-math.exp(-x) / B)  # noqa: E731
    p = (1 - F(v)) / (1 - F(u))
    assert abs(np.mean(y > v) - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_predictive_degenerate_threshold():
    with pytest.raises(DegenerateSiteError):
        predictive_draws_from_parameters(np.array([0.0]), np.array([1.0]), np.array([-0.4]), 10.0, 365.25, np.random.default_rng(0))


def test_posterior_predictive_cycles_draws():
    s = repeated_draw_samples(10.0, 5.0, 0.1, n_draws=3, n_sites=2)
    cfg = PredictConfig([12.0, 15.0], 365.25, n_draws=10)
    a = posterior_predictive_draws(s, 1, cfg, np.random.default_rng(4))
    b = posterior_predictive_draws(s, 1, cfg, np.random.default_rng(4))
    assert a.shape == (10,) and np.all(a > 15.0)
    assert np.array_equal(a, b)
    with pytest.raises(InvalidInputError):
        posterior_predictive_draws(s, 2, cfg, np.random.default_rng(4))


def test_variogram_constant_field():
    coords = np.random.default_rng(0).uniform(0, 10, (40, 2))
    vg = empirical_variogram(np.full(40, 3.0), coords, 6)
    assert np.all(vg.semivariance[vg.counts > 0] == 0)


def test_variogram_white_noise():
    rng = np.random.default_rng(5)
    n = 300
    coords = rng.uniform(0, 10, (n, 2))
    # pairs within a bin share sites, so take the SE from replicates at the same coordinates
    reps = np.array([empirical_variogram(rng.normal(0, 2.0, n), coords, 8).semivariance for _ in range(200)])
    se = reps.std(axis=0, ddof=1)
    vg = empirical_variogram(rng.normal(0, 2.0, n), coords, 8)
    assert np.all(np.abs(vg.semivariance - 4.0) < 4 * se)
    assert np.all(np.abs(reps.mean(axis=0) - 4.0) < 4 * se / math.sqrt(200))


def test_variogram_pair_counts():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    vg = empirical_variogram([0.0, 1.0, 3.0], coords, n_bins=3, max_dist=3.0)
    assert vg.counts.tolist() == [0, 1, 2]
    assert vg.semivariance[1] == pytest.approx(0.5)
    assert vg.semivariance[2] == pytest.approx((4 + 9) / 4)
    assert math.isnan(vg.semivariance[0])
    with pytest.raises(InvalidInputError):
        empirical_variogram([1.0], [[0.0, 0.0]])


def test_variogram_of_gmrf_sample():
    mesh = Mesh((0.0, 0.0), 30, 30, 1.0)
    Q = build_precision(mesh, 3.0)
    s = 1.3
    x = gmrf_sample(Q, s, np.random.default_rng(6), size=30)
    curves = np.array([empirical_variogram(xi, mesh.nodes, 10, max_dist=15.0).semivariance for xi in x])
    g = curves.mean(axis=0)
    assert np.all(np.diff(g[:5]) > 0)
    assert abs(g[-3:].mean() - s**2) / s**2 < 0.2


def test_writers(tmp_path):
    s = repeated_draw_samples(10.0, 5.0, 0.1, n_sites=2)
    write_return_levels(tmp_path / "rl.csv", [4, 7], [0.0, 1.0], [2.0, 3.0], [return_level_surface(s, 100.0)])
    lines = (tmp_path / "rl.csv").read_text().splitlines()
    assert lines[0] == "site_id,lon,lat,M,mean,sd,q025,q975" and len(lines) == 3
    write_predictive(tmp_path / "p.csv", 7, [1.5, 2.5])
    assert (tmp_path / "p.csv").read_text() == "site_id,draw,value\n7,0,1.5\n7,1,2.5\n"
    vg = empirical_variogram([0.0, 1.0, 3.0], [[0, 0], [1, 0], [3, 0]], 3, 3.0)
    write_variogram(tmp_path / "v.csv", vg)
    assert (tmp_path / "v.csv").read_text().splitlines()[1].split(",")[1] == "NA"
