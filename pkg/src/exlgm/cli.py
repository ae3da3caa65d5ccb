"""Command-line interface: ``exlgm <subcommand> --config run.json ...``.

Exit status is 0 on success, 1 for invalid input or usage errors and 2 for
numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .errors import (
    ConvergenceError,
    DegenerateSiteError,
    ExlgmError,
    InvalidInputError,
    NotPositiveDefiniteError,
)
from .gmrf import Mesh, build_mesh, build_projection, write_mesh_csv
from .maxstep import fit_all_sites
from .products import (
    PredictConfig,
    empirical_variogram,
    posterior_predictive_draws,
    return_level_surface,
    write_predictive,
    write_return_levels,
    write_variogram,
)
from .simulate import grid_sites, simulate_fixed, simulate_generative
from .smooth import THETA_NAMES, PosteriorSamples, SmoothModel, assemble_design, stack_estimates

log = logging.getLogger("exlgm")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _bbox(lon, lat):
    return (float(np.min(lon)), float(np.max(lon)), float(np.min(lat)), float(np.max(lat)))


def cmd_simulate(args, cfg: RunConfig):
    sim = cfg.simulation
    seed = sim.seed if args.seed is None else args.seed
    coords = grid_sites(sim.nx, sim.ny, sim.spacing, tuple(sim.origin))
    if sim.mode == "fixed":
        ds, truth = simulate_fixed(coords, sim.mu, sim.sigma, sim.xi, sim.n_times, cfg.block_size, seed, clip=sim.clip)
    else:
        bbox = _bbox(coords[:, 0], coords[:, 1])
        mesh = build_mesh(bbox, cfg.mesh.resolve_spacing(bbox), cfg.mesh.margin)
        ds, truth = simulate_generative(
            coords, mesh, sim.theta, sim.n_times, cfg.block_size, seed, beta=sim.beta, clip=sim.clip
        )
    io.write_dataset(ds, args.out)
    truth_path = args.truth or str(Path(args.out).with_suffix("")) + ".truth.json"
    io.dump_json(truth.to_dict(), truth_path)
    return EXIT_OK


def cmd_maxfit(args, cfg: RunConfig):
    ds = io.load_dataset(args.data)
    n_block = cfg.resolve_n_block(ds.n_times)
    fits, report = fit_all_sites(ds, cfg.threshold_quantile, n_block, cfg.min_exceedances)
    io.write_fits(fits, args.out)
    io.write_exclusions(report, io.exclusions_path(args.out))
    if len(report):
        log.warning("%d site(s) excluded; see %s", len(report), io.exclusions_path(args.out))
    return EXIT_OK


def _mesh_for(fits, exclusions, cfg: RunConfig) -> Mesh:
    lon = [f.lon for f in fits] + [e[1] for e in exclusions.excluded]
    lat = [f.lat for f in fits] + [e[2] for e in exclusions.excluded]
    bbox = _bbox(lon, lat)
    return build_mesh(bbox, cfg.mesh.resolve_spacing(bbox), cfg.mesh.margin)


def cmd_smooth(args, cfg: RunConfig):
    fits = io.load_fits(args.fits)
    exclusions = io.load_exclusions(io.exclusions_path(args.fits))
    if len(exclusions) and not args.allow_exclusions:
        raise InvalidInputError(
            f"{len(exclusions)} site(s) inside the mesh were excluded by maxfit; "
            "rerun with --allow-exclusions to smooth the remaining sites"
        )
    mesh = _mesh_for(fits, exclusions, cfg)
    coords = np.array([[f.lon, f.lat] for f in fits])
    eta_hat, Q_data = stack_estimates(fits)
    Z = assemble_design(len(fits), build_projection(mesh, coords))
    chain = cfg.chain
    if args.seed is not None:
        chain = type(chain)(**{**chain.to_dict(), "seed": args.seed})
    model = SmoothModel(eta_hat, Q_data, Z, mesh, cfg.prior)
    samples = model.run_chain(chain)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "draws.npy", samples.as_matrix())
    if args.csv:
        _write_draws_csv(out / "draws.csv", samples)
    io.dump_json(samples.summary(), out / "summary.json")
    io.dump_json(
        {
            "site_id": [f.site_id for f in fits],
            "lon": coords[:, 0].tolist(),
            "lat": coords[:, 1].tolist(),
            "threshold": [f.threshold for f in fits],
            "n_sites": samples.n_sites,
            "n_mesh": samples.n_mesh,
            "mesh": mesh.to_dict(),
            "acceptance_rate": samples.acceptance_rate,
            "seed": samples.seed,
            "prior": model.prior.to_dict(),
            "chain": chain.to_dict(),
            "columns": "7 hyperparameters, then eta (psi, tau, phi blocks), then nu",
        },
        out / "model.json",
    )
    write_mesh_csv(mesh, out / "mesh.csv")
    return EXIT_OK


def _write_draws_csv(path, samples: PosteriorSamples):
    N, M = samples.n_sites, samples.n_mesh
    names = list(THETA_NAMES)
    names += [f"{b}_{i}" for b in ("psi", "tau", "phi") for i in range(N)]
    names += ["beta_psi"] + [f"u_psi_{j}" for j in range(M)] + ["beta_tau"] + [f"u_tau_{j}" for j in range(M)] + ["beta_phi"]
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in samples.as_matrix():
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def _load_posterior(post_dir):
    post = Path(post_dir)
    try:
        with open(post / "model.json", encoding="utf-8") as fh:
            meta = json.load(fh)
        mat = np.load(post / "draws.npy")
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"{post}: cannot read posterior output ({exc})") from None
    samples = PosteriorSamples.from_matrix(
        mat, meta["n_sites"], meta["n_mesh"], meta["acceptance_rate"], meta["seed"]
    )
    return samples, meta


def cmd_returnlevels(args, cfg: RunConfig):
    samples, meta = _load_posterior(args.post)
    periods = args.periods if args.periods else cfg.return_periods
    surfaces = [return_level_surface(samples, float(M)) for M in periods]
    write_return_levels(args.out, meta["site_id"], meta["lon"], meta["lat"], surfaces)
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig):
    samples, meta = _load_posterior(args.post)
    ids = list(meta["site_id"])
    if args.site not in ids:
        raise InvalidInputError(f"site {args.site} not in the posterior output")
    k = ids.index(args.site)
    pc = PredictConfig(
        np.asarray(meta["threshold"], dtype=float),
        cfg.block_size,
        args.n_draws if args.n_draws is not None else cfg.predict.n_draws,
    )
    seed = cfg.predict.seed if args.seed is None else args.seed
    rng = np.random.default_rng([seed, int(args.site) & 0xFFFFFFFF])
    draws = posterior_predictive_draws(samples, k, pc, rng)
    write_predictive(args.out, args.site, draws)
    return EXIT_OK


def cmd_variogram(args, cfg: RunConfig):
    fits = io.load_fits(args.fits)
    col = {"psi": 0, "tau": 1, "phi": 2}[args.param]
    values = np.array([f.eta_hat.as_array()[col] for f in fits])
    coords = np.array([[f.lon, f.lat] for f in fits])
    n_bins = args.n_bins if args.n_bins is not None else cfg.variogram.n_bins
    max_dist = args.max_dist if args.max_dist is not None else cfg.variogram.max_dist
    write_variogram(args.out, empirical_variogram(values, coords, n_bins, max_dist))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="exlgm", description="Max-and-Smooth for spatial peaks-over-threshold extremes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="RunConfig JSON (defaults apply when omitted)")
        s.set_defaults(func=func)
        return s

    s = add("simulate", cmd_simulate, "write a synthetic data CSV and its truth record")
    s.add_argument("--out", required=True)
    s.add_argument("--truth", help="truth JSON path (default: <out>.truth.json)")
    s.add_argument("--seed", type=int)

    s = add("maxfit", cmd_maxfit, "sitewise fits and observed information")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)

    s = add("smooth", cmd_smooth, "spatial smoothing of the sitewise fits by MCMC")
    s.add_argument("--fits", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--allow-exclusions", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--csv", action="store_true", help="also write draws.csv")

    s = add("returnlevels", cmd_returnlevels, "return-level surface from posterior draws")
    s.add_argument("--post", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--periods", type=float, nargs="+")

    s = add("predict", cmd_predict, "posterior predictive exceedance draws at one site")
    s.add_argument("--post", required=True)
    s.add_argument("--site", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n-draws", type=int)
    s.add_argument("--seed", type=int)

    s = add("variogram", cmd_variogram, "empirical variogram of the sitewise estimates")
    s.add_argument("--fits", required=True)
    s.add_argument("--param", choices=("psi", "tau", "phi"), default="psi")
    s.add_argument("--out", required=True)
    s.add_argument("--n-bins", type=int)
    s.add_argument("--max-dist", type=float)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except (NotPositiveDefiniteError, ConvergenceError, DegenerateSiteError, FloatingPointError) as exc:
        print(f"exlgm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidInputError, OSError) as exc:
        print(f"exlgm: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ExlgmError as exc:
        print(f"exlgm: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
