"""Acceptance criteria 1 to 11, one test each; every test prints a PASS/FAIL line."""
import csv
import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import dense_oracle, make_toy
from exlgm import evt
from exlgm.cli import main
from exlgm.evt import PPParameters
from exlgm.gmrf import Mesh, build_precision, gmrf_log_density, gmrf_sample
from exlgm.link import h, h_inverse, link_forward, link_inverse
from exlgm.maxstep import fit_site, gaussian_approximation, gaussian_likelihood_check
from exlgm.simulate import simulate_fixed
from exlgm.smooth import SmoothModel, gibbs_draw_latent, latent_full_conditional
from exlgm.smooth import HyperParameters

THETA_STAR = [0.05, 0.6, 8.0, 0.003, 0.4, 8.0, 0.06]


def test_criterion_01_evt_closed_forms(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    mu = rng.uniform(-100, 100, 1000)
    sigma = rng.uniform(0.01, 50, 1000)
    xi = rng.uniform(-0.49, 0.49, 1000)
    at_mu = max(abs(evt.gev_cdf(m, PPParameters(m, s, x)) - math.exp(-1)) for m, s, x in zip(mu, sigma, xi))
    p_exc = rng.uniform(1e-6, 0.999, 1000)
    roundtrip = max(
        abs(evt.gev_cdf(evt.gev_return_level(p, PPParameters(m, s, x)), PPParameters(m, s, x)) - (1 - p))
        for p, m, s, x in zip(p_exc, mu, sigma, xi)
    )
    z = np.linspace(-3, 8, 500)
    cont = max(
        np.max(np.abs(evt.gev_cdf(z, PPParameters(0, 1, e)) - evt.gev_cdf(z, PPParameters(0, 1, 0.0))))
        for e in (1e-9, -1e-9, 1e-10)
    )
    elapsed = time.perf_counter() - t0
    ok = at_mu < 1e-14 and roundtrip < 1e-10 and cont < 1e-6 and elapsed < 1.0
    criterion(1, ok, f"G(mu) err {at_mu:.2e}, inverse roundtrip {roundtrip:.2e}, xi=0 continuity {cont:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_02_link_roundtrip(criterion):
    t0 = time.perf_counter()
    xi = np.linspace(-0.4999, 0.4999, 10_000)
    rt = float(np.max(np.abs(h_inverse(h(xi)) - xi)))
    near = np.linspace(-0.1, 0.1, 10_000)
    ident = float(np.max(np.abs(h(near) - near)))
    rng = np.random.default_rng(102)
    lk = 0.0
    for m, s, x in zip(rng.uniform(0.1, 100, 1000), rng.uniform(0.1, 50, 1000), rng.uniform(-0.49, 0.49, 1000)):
        b = link_inverse(link_forward(PPParameters(m, s, x)))
        lk = max(lk, abs(b.mu - m) / m, abs(b.sigma - s) / s, abs(b.xi - x))
    elapsed = time.perf_counter() - t0
    ok = rt < 1e-10 and ident < 0.02 and lk < 1e-10 and elapsed < 1.0
    criterion(2, ok, f"h roundtrip {rt:.2e}, |h(xi)-xi| on [-0.1,0.1] {ident:.4f}, link roundtrip {lk:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_03_toy_normal_information(criterion):
    t0 = time.perf_counter()
    worst_mode, worst_info = 0.0, 0.0
    for m in (10, 100, 1000):
        w = np.random.default_rng(m).normal(0.8, 1.0, m)
        fit = gaussian_approximation(lambda g: -0.5 * float(np.sum((w - g[0]) ** 2)), [0.0])
        worst_mode = max(worst_mode, abs(fit.mode[0] - w.mean()))
        worst_info = max(worst_info, abs(fit.info[0, 0] - m) / m)
    elapsed = time.perf_counter() - t0
    ok = worst_mode < 1e-8 and worst_info < 1e-6 and elapsed < 1.0
    criterion(3, ok, f"|MLE - mean| {worst_mode:.2e}, info rel err {worst_info:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_04_sitewise_recovery(criterion):
    t0 = time.perf_counter()
    T, n_sites = 7305, 200
    ds, _ = simulate_fixed(np.zeros((n_sites, 2)), 10.0, 5.0, 0.1, T, 365.25, 2004)
    truth = link_forward(PPParameters(10.0, 5.0, 0.1)).as_array()
    z = []
    for s in ds.iter_series():
        f = fit_site(s, 0.75, 20.0)
        z.append((f.eta_hat.as_array() - truth) / f.standard_errors)
    z = np.array(z)
    p = stats.kstest(z.ravel(), "norm").pvalue
    cover = float(np.mean(np.abs(z) < 3))
    per = [stats.kstest(z[:, k], "norm").pvalue for k in range(3)]
    elapsed = time.perf_counter() - t0
    ok = p > 0.01 and cover >= 0.99 and elapsed < 120
    criterion(
        4, ok,
        f"pooled KS p {p:.2e} (psi {per[0]:.2f}, tau {per[1]:.2f}, phi {per[2]:.1e}), "
        f"3-SE coverage {cover:.3f}, phi z mean {z[:, 2].mean():.2f} sd {z[:, 2].std():.2f}, {elapsed:.0f}s",
    )
    assert ok


def test_criterion_05_gaussian_approximation(criterion):
    t0 = time.perf_counter()
    # about 0.64% of days exceed the threshold for (10, 5, 0.1) at q = 0.75
    levels = (15, 60, 150, 600)
    reps = 20
    means, counts = [], []
    for target in levels:
        T = int(round(target / 0.00637))
        d = []
        n = []
        for r in range(reps):
            ds, _ = simulate_fixed(np.zeros((1, 2)), 10.0, 5.0, 0.1, T, 365.25, [target, r])
            s = next(ds.iter_series())
            f = fit_site(s, 0.75, T / 365.25, min_exceedances=5)
            d.append(gaussian_likelihood_check(s, f))
            n.append(f.n_exceedances)
        means.append(np.mean(d, axis=0))
        counts.append(np.mean(n))
    means = np.array(means)
    accurate = bool(np.all(means[1:, [0, 2]] < 0.1))
    monotone = {name: bool(np.all(np.diff(means[:, k]) < 0)) for k, name in ((0, "psi"), (2, "phi"))}
    elapsed = time.perf_counter() - t0
    ok = accurate and all(monotone.values()) and elapsed < 60
    table = "; ".join(
        f"n~{c:.0f}: psi {m[0]:.3f} tau {m[1]:.3f} phi {m[2]:.3f}" for c, m in zip(counts, means)
    )
    criterion(5, ok, f"mean sup-distance {table}; <0.1 at n>=60: {accurate}; monotone {monotone}; {elapsed:.0f}s")
    assert ok


def test_criterion_06_gmrf_oracles(criterion):
    t0 = time.perf_counter()
    mesh = Mesh((0.0, 0.0), 6, 6, 1.0)
    Q = build_precision(mesh, 2.0)
    S = 1.5**2 * np.linalg.inv(Q.toarray())
    n = 200_000
    x = gmrf_sample(Q, 1.5, np.random.default_rng(106), size=n)
    emp = x.T @ x / n
    se = np.sqrt((S**2 + np.outer(np.diag(S), np.diag(S))) / n)
    z_cov = float(np.max(np.abs(emp - S) / se))
    v = np.random.default_rng(1).standard_normal(36)
    dense = stats.multivariate_normal(np.zeros(36), S).logpdf(v)
    ld = abs(gmrf_log_density(v, Q, 1.5) - dense)
    m10 = Mesh((0.0, 0.0), 10, 10, 1.0)
    C = np.linalg.inv(build_precision(m10, 3.0).toarray())
    a, b = 4 * 10 + 3, 4 * 10 + 6
    corr = C[a, b] / math.sqrt(C[a, a] * C[b, b])
    elapsed = time.perf_counter() - t0
    ok = z_cov < 4 and ld < 1e-8 and 0.08 <= corr <= 0.18 and elapsed < 120
    criterion(6, ok, f"max cov z {z_cov:.2f}, log-density err {ld:.2e}, corr at range {corr:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_07_conjugacy(criterion):
    t0 = time.perf_counter()
    toy = make_toy()
    th = toy.theta
    mean, cov, _ = dense_oracle(toy, th)
    fc = latent_full_conditional(
        toy.eta_hat, toy.Q_data, th, toy.Z,
        build_precision(toy.mesh, th.rho_psi), build_precision(toy.mesh, th.rho_tau), toy.prior,
    )
    d_mean = float(np.max(np.abs(fc.mean - mean)))
    d_cov = float(np.max(np.abs(fc.covariance - cov)))
    n = 100_000
    rng = np.random.default_rng(107)
    draws = np.array([np.concatenate([s.eta, s.nu]) for s in (gibbs_draw_latent(fc, rng) for _ in range(n))])
    sd = np.sqrt(np.diag(cov))
    z_mean = float(np.max(np.abs(draws.mean(axis=0) - mean) / (sd / math.sqrt(n))))
    se = np.sqrt((cov**2 + np.outer(np.diag(cov), np.diag(cov))) / n)
    z_cov = float(np.max(np.abs(np.cov(draws.T) - cov) / se))
    elapsed = time.perf_counter() - t0
    ok = d_mean < 1e-8 and d_cov < 1e-8 and z_mean < 4 and z_cov < 4 and elapsed < 60
    criterion(7, ok, f"mean err {d_mean:.1e}, cov err {d_cov:.1e}, Gibbs max z mean {z_mean:.2f} cov {z_cov:.2f}, {elapsed:.1f}s")
    assert ok


def test_criterion_08_marginal_likelihood(criterion):
    t0 = time.perf_counter()
    toy = make_toy()
    model = SmoothModel(toy.eta_hat, toy.Q_data, toy.Z, toy.mesh, toy.prior)
    rng = np.random.default_rng(108)
    thetas = [toy.theta] + [HyperParameters.from_array(np.exp(rng.normal(np.log(toy.theta.as_array()), 0.7))) for _ in range(5)]
    ours = np.array([model.log_marginal_likelihood(t) for t in thetas])
    dense = np.array(
        [stats.multivariate_normal(np.zeros(12), dense_oracle(toy, t)[2]).logpdf(toy.eta_hat) for t in thetas]
    )
    diff_err = float(np.max(np.abs((ours - ours[0]) - (dense - dense[0]))))
    inv = 0.0
    for t in thetas:
        fc, _ = model.full_conditional(t)
        off = fc.mean + rng.normal(scale=1.0, size=fc.mean.size)
        inv = max(inv, abs(model.log_marginal_hyper(t, x_star=off) - model.log_marginal_hyper(t)))
    elapsed = time.perf_counter() - t0
    ok = diff_err < 1e-6 and inv < 1e-8 and elapsed < 30
    criterion(8, ok, f"difference err {diff_err:.1e}, x* invariance {inv:.1e}, {elapsed:.2f}s")
    assert ok


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.slow
def test_criterion_09_simulation_based_calibration(criterion, tmp_path):
    t0 = time.perf_counter()
    n_rep = 20
    hyper_cover = np.zeros(7, dtype=int)
    site_cover, n_fitted, n_excluded = [], [], []
    for rep in range(n_rep):
        d = tmp_path / f"rep{rep}"
        d.mkdir()
        cfg = {
            "mesh": {"spacing": 1.5, "margin": 3.0},
            "chain": {"n_iterations": 10000, "n_burnin": 2000, "seed": rep},
            "simulation": {"mode": "generative", "nx": 15, "ny": 15, "n_times": 5000, "theta": THETA_STAR, "seed": 9000 + rep},
        }
        (d / "c.json").write_text(json.dumps(cfg))
        c = ["--config", str(d / "c.json")]
        codes = [
            main(["simulate", *c, "--out", str(d / "data.csv")]),
            main(["maxfit", *c, "--data", str(d / "data.csv"), "--out", str(d / "fits.csv")]),
            main(["smooth", *c, "--fits", str(d / "fits.csv"), "--out", str(d / "post"), "--allow-exclusions"]),
            main(["returnlevels", *c, "--post", str(d / "post"), "--out", str(d / "rl.csv"), "--periods", "100"]),
        ]
        assert codes == [0, 0, 0, 0]
        truth = json.loads((d / "data.truth.json").read_text())
        summary = json.loads((d / "post" / "summary.json").read_text())
        for k, row in enumerate(summary["hyperparameters"]):
            hyper_cover[k] += row["q025"] <= truth["theta"][k] <= row["q975"]
        z100 = np.asarray(truth["return_levels"]["100.0"])
        rl = _read_rows(d / "rl.csv")
        hits = [float(r["q025"]) <= z100[int(r["site_id"])] <= float(r["q975"]) for r in rl]
        site_cover.append(float(np.mean(hits)))
        n_fitted.append(len(rl))
        n_excluded.append(len(_read_rows(d / "fits.exclusions.csv")))
    elapsed = time.perf_counter() - t0
    names = ("sigma_psi", "s_psi", "rho_psi", "sigma_tau", "s_tau", "rho_tau", "sigma_phi")
    hyper_ok = bool(np.all(hyper_cover >= 15))
    rl_cover = float(np.mean(site_cover))
    ok = hyper_ok and rl_cover >= 0.9 and elapsed < 3 * 3600
    cover_str = ", ".join(f"{n} {c}/20" for n, c in zip(names, hyper_cover))
    criterion(
        9, ok,
        f"95% interval coverage: {cover_str}; mean site z100 coverage {rl_cover:.3f}; "
        f"sites fitted {np.mean(n_fitted):.0f} (excluded {np.mean(n_excluded):.0f}) per replication; {elapsed / 60:.0f} min",
    )
    assert ok


def test_criterion_10_smooth_cost_independent_of_T(criterion, tmp_path):
    t0 = time.perf_counter()
    # mu = 30 puts nearly every day above zero, so all 225 sites keep 25% of T as exceedances
    times = {}
    for T in (100, 10000):
        d = tmp_path / f"T{T}"
        d.mkdir()
        cfg = {
            "mesh": {"spacing": 1.5, "margin": 3.0},
            "chain": {"n_iterations": 1500, "n_burnin": 500, "seed": 1},
            "simulation": {"mode": "fixed", "nx": 15, "ny": 15, "n_times": T, "mu": 30.0, "sigma": 5.0, "xi": 0.1, "seed": 5},
        }
        (d / "c.json").write_text(json.dumps(cfg))
        c = ["--config", str(d / "c.json")]
        assert main(["simulate", *c, "--out", str(d / "data.csv")]) == 0
        assert main(["maxfit", *c, "--data", str(d / "data.csv"), "--out", str(d / "fits.csv")]) == 0
        assert len(_read_rows(d / "fits.csv")) == 225
        times[T] = (d, c)
    # the sandbox CPU speed drifts by up to 30% between runs, so the two inputs are
    # timed in interleaved rounds and compared on their fastest run
    walls = {T: [] for T in times}
    for _ in range(4):
        for T, (d, c) in times.items():
            s = time.perf_counter()
            assert main(["smooth", *c, "--fits", str(d / "fits.csv"), "--out", str(d / "post")]) == 0
            walls[T].append(time.perf_counter() - s)
    a, b = min(walls[100]), min(walls[10000])
    ratio = max(a, b) / min(a, b)
    runs = "; ".join(f"T={T}: " + ", ".join(f"{w:.1f}" for w in ws) for T, ws in walls.items())
    elapsed = time.perf_counter() - t0
    ok = ratio <= 1.2 and elapsed < 600
    criterion(10, ok, f"fastest smooth wall-clock T=100 {a:.1f}s, T=10000 {b:.1f}s, ratio {ratio:.3f} (runs {runs}); {elapsed:.0f}s total")
    assert ok


def test_criterion_11_determinism(criterion, tmp_path):
    def pipeline(d, mode):
        d.mkdir()
        sim = {"mode": mode, "nx": 5, "ny": 5, "n_times": 600, "seed": 4}
        if mode == "fixed":
            sim.update({"mu": 20.0, "sigma": 5.0, "xi": 0.1})
        cfg = {
            "min_exceedances": 5,
            "mesh": {"spacing": 1.0, "margin": 1.0},
            "chain": {"n_iterations": 300, "n_burnin": 100, "seed": 7, "init_evaluations": 50},
            "simulation": sim,
            "predict": {"n_draws": 100, "seed": 8},
        }
        (d / "c.json").write_text(json.dumps(cfg))
        c = ["--config", str(d / "c.json")]
        codes = [
            main(["simulate", *c, "--out", str(d / "data.csv")]),
            main(["maxfit", *c, "--data", str(d / "data.csv"), "--out", str(d / "fits.csv")]),
            main(["smooth", *c, "--fits", str(d / "fits.csv"), "--out", str(d / "post"), "--csv", "--allow-exclusions"]),
            main(["returnlevels", *c, "--post", str(d / "post"), "--out", str(d / "rl.csv")]),
            main(["predict", *c, "--post", str(d / "post"), "--site", "12", "--out", str(d / "pred.csv")]),
            main(["variogram", *c, "--fits", str(d / "fits.csv"), "--out", str(d / "vg.csv")]),
        ]
        return codes

    files = ["data.csv", "data.truth.json", "fits.csv", "fits.exclusions.csv", "rl.csv", "pred.csv", "vg.csv"]
    files += [f"post/{n}" for n in ("draws.npy", "draws.csv", "summary.json", "model.json", "mesh.csv")]
    mismatched, bad_codes = [], []
    for mode in ("fixed", "generative"):
        c1 = pipeline(tmp_path / f"{mode}1", mode)
        c2 = pipeline(tmp_path / f"{mode}2", mode)
        if c1 != [0] * 6 or c2 != c1:
            bad_codes.append((mode, c1, c2))
            continue
        for f in files:
            if (tmp_path / f"{mode}1" / f).read_bytes() != (tmp_path / f"{mode}2" / f).read_bytes():
                mismatched.append(f"{mode}:{f}")
    ok = not mismatched and not bad_codes
    criterion(11, ok, f"{len(files)} outputs x 2 simulation modes compared; mismatches {mismatched or 'none'}; exit-code issues {bad_codes or 'none'}")
    assert ok
