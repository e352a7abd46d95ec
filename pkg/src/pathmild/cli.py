"""Command-line front end: ``pathmild simulate|verify|attractor|dimension``.

Every run writes its outputs plus ``manifest.json`` (version, seeds, full
configuration, its hash and a SHA-256 of every output file) to ``--output``.
Passing the manifest back as ``--config`` replays the run bit-exactly.

Configuration layers: defaults < ``--config`` file < ``PATHMILD_*``
environment variables (``__`` stands for a dot) < ``--set key=value``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from ._validation import ConditionError, CoverageError
from .attractor import (
    InitialEnsemble,
    absorbing_radius,
    attraction_rate,
    box_counting,
    covering_number,
    dimension_sweep,
    pullback_cloud,
    smoothing_constant,
)
from .config import ConfigError, ENV_PREFIX, load_config, parse_set
from .operator import draw_decay_samples, verify_decay_estimates, write_decay_csv
from .solver import pathwise_mild_solve, save_trajectory, write_trajectory_csv
from .verify import SUITES, regression_baseline, run_suite, summary_table, write_results

__all__ = ["main", "build_parser", "cmd_simulate", "cmd_verify", "cmd_attractor", "cmd_dimension"]

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _fmt(x):
    return f"{x:.17g}" if isinstance(x, (float, np.floating)) else str(x)


def _write_rows(file, header, rows):
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _sha256(file):
    h = hashlib.sha256()
    with open(file, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else str(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _dump_json(obj, file):
    with open(file, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_manifest(outdir, command, cfg, files):
    """Manifest with everything needed for a bit-exact replay."""
    manifest = {
        "tool": "pathmild",
        "version": __version__,
        "command": command,
        "seeds": cfg.seeds,
        "config": cfg.as_dict(),
        "config_hash": cfg.hash,
        "files": {os.path.basename(f): _sha256(f) for f in sorted(files)},
    }
    path = os.path.join(outdir, "manifest.json")
    _dump_json(manifest, path)
    return path


def _map(fn, items, threads):
    """Ordered map; threads only change scheduling, never the result order."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- subcommands -----------------------------------------------------------------

def cmd_simulate(cfg, outdir, threads=1):
    """One trajectory per seed from ``simulate.u0`` over ``simulate.horizon``."""
    gen, F, sigma, params = cfg.generator(), cfg.nonlinearity(), cfg.sigma, cfg.solver_params()
    formats = cfg["output.formats"]

    def run(seed):
        traj = pathwise_mild_solve(cfg.initial_state(seed), cfg["simulate.horizon"], cfg.path(seed),
                                   gen, F, sigma, params, store_every=cfg["simulate.store_every"])
        files = []
        if "csv" in formats:
            f = os.path.join(outdir, f"trajectory_seed{seed}.csv")
            write_trajectory_csv(traj, f)
            files.append(f)
        if "binary" in formats:
            f = os.path.join(outdir, f"trajectory_seed{seed}.pmtraj")
            save_trajectory(traj, f, cfg.as_dict())
            files.append(f)
        n = traj.norms()
        return files, [seed, traj.times[-1], n[0], n[-1], int(np.sum(traj.picard_iterations))]

    results = _map(run, cfg.seeds, threads)
    files = [f for fs, _ in results for f in fs]
    summary = os.path.join(outdir, "simulate_summary.csv")
    _write_rows(summary, ["seed", "horizon", "initial_norm", "final_norm", "picard_iterations"],
                [row for _, row in results])
    files.append(summary)
    write_manifest(outdir, "simulate", cfg, files)
    for _, row in results:
        print(f"seed {row[0]}: |u(0)| = {row[2]:.6g}, |u({row[1]:g})| = {row[3]:.6g}")
    return EXIT_OK


def cmd_verify(cfg, outdir, suite="all", threads=1, baseline=None):
    """Run a property suite; exit 1 iff any check fails."""
    if suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; choose from {', '.join(sorted(SUITES))}")
    results = run_suite(suite, cfg, threads=threads)
    files = []
    res_file = os.path.join(outdir, "verify_results.json")
    write_results(results, res_file)
    files.append(res_file)
    table = summary_table(results)
    txt = os.path.join(outdir, "verify_summary.txt")
    with open(txt, "w") as fh:
        fh.write(table + "\n")
    files.append(txt)
    if suite in ("estimates", "all"):
        # decay-estimate table on the first fibre with the calibrated constants
        seed = cfg.seeds[0]
        gen = cfg.generator().on(cfg.path(seed))
        const = cfg.calibrated_constants()
        rows = verify_decay_estimates(
            gen, const, draw_decay_samples(gen, np.random.default_rng(seed), 256,
                                           sorted({0.0, *const.alphas})))
        f = os.path.join(outdir, "decay_estimates.csv")
        write_decay_csv(rows, f)
        files.append(f)
    if baseline is not None:
        report = regression_baseline(baseline, results)
        f = os.path.join(outdir, "regression.json")
        _dump_json(report, f)
        files.append(f)
    write_manifest(outdir, f"verify --suite {suite}", cfg, files)
    print(table)
    return EXIT_FAIL if any(r.status == "fail" for r in results) else EXIT_OK


def _nu_sweep(cfg, kappa):
    return dimension_sweep(cfg["attractor.nu_grid"], cfg["attractor.eta"], kappa, cfg["instance.K"])


def cmd_attractor(cfg, outdir, threads=1):
    """Absorbing radii, pullback clouds, dimension table and attraction rates per fibre."""
    gen, F, sigma = cfg.generator(), cfg.nonlinearity(), cfg.sigma
    params = cfg.solver_params(cfg["attractor.solver_dt"])
    const = cfg.calibrated_constants()
    t_tilde = cfg["attractor.t_tilde"]
    kappa = smoothing_constant(const, t_tilde)
    kappa_stmt = smoothing_constant(const, t_tilde, form="statement")
    nus, bounds, nu_star, bound = _nu_sweep(cfg, kappa)
    er = cfg["attractor.eps_range"]
    eps = np.geomspace(er[0], er[1], cfg["attractor.eps_count"])
    ens = InitialEnsemble(cfg["attractor.ensemble_law"], cfg["attractor.ensemble_count"],
                          cfg["attractor.ensemble_radius"], cfg["attractor.ensemble_seed"])
    Ts = sorted(cfg["attractor.T"])

    def run(seed):
        p = cfg.path(seed)
        spec = absorbing_radius(p, const, delta_rule=cfg["attractor.delta_rule"])
        radius = spec.radius
        files, dim_rows = [], []
        clouds = {}
        for T in Ts:
            cloud = pullback_cloud(ens, T, p, gen, F, sigma, params)
            clouds[T] = cloud
            f = os.path.join(outdir, f"cloud_seed{seed}_T{T:g}.csv")
            cloud.write_csv(f)
            files.append(f)
            box = box_counting(cloud, eps) if len(cloud) >= 100 else None
            emp = box.dimension if box else math.nan
            lo, hi = box.ci if box else (math.nan, math.nan)
            dim_rows.append([seed, T, cloud.max_norm, radius, int(cloud.max_norm <= radius), cloud.diameter,
                             emp, lo, hi, bound, int(not emp > bound)])
        rate = attraction_rate(ens, clouds[Ts[-1]], cfg["attractor.rate_s"], p, gen, F, sigma, params)
        abs_row = [seed, spec.rho, spec.delta, *spec.components, spec.t_min, spec.tail_bound,
                   spec.quadrature_error]
        rate_row = [seed, rate.alpha, rate.ci[0], rate.ci[1], int(rate.significant)]
        return files, abs_row, dim_rows, rate_row

    results = _map(run, cfg.seeds, threads)
    files = [f for r in results for f in r[0]]
    out = {
        "absorbing.csv": (["seed", "rho", "delta", "rho_drift", "rho_lipschitz", "rho_noise",
                           "t_min", "tail_bound", "quadrature_error"], [r[1] for r in results]),
        "dimension.csv": (["seed", "T", "max_norm", "absorbing_radius", "inside_ball", "diameter",
                           "box_dimension", "ci_low", "ci_high", "dimension_bound", "bound_ge_empirical"],
                          [row for r in results for row in r[2]]),
        "attraction_rate.csv": (["seed", "alpha", "ci_low", "ci_high", "significant"],
                                [r[3] for r in results]),
        "nu_sweep.csv": (["nu", "bound"], list(zip(nus, bounds))),
    }
    for name, (header, rows) in out.items():
        f = os.path.join(outdir, name)
        _write_rows(f, header, rows)
        files.append(f)
    dims = [row for r in results for row in r[2]]
    report = {
        "kappa_proof": kappa,
        "kappa_statement": kappa_stmt,
        "C_tilde": {str(k): v for k, v in sorted(const.C_tilde.items())},
        "nu_argmin": nu_star,
        "dimension_bound": bound,
        "max_box_dimension": max((d[6] for d in dims if not math.isnan(d[6])), default=math.nan),
        "bound_ge_empirical": all(d[10] for d in dims),
    }
    f = os.path.join(outdir, "attractor.json")
    _dump_json(report, f)
    files.append(f)
    write_manifest(outdir, "attractor", cfg, files)
    for r in results:
        print(f"seed {r[1][0]}: rho = {r[1][1]:.6g}, alpha = {r[3][1]:.4g}")
    print(f"kappa = {kappa:.6g} (statement form {kappa_stmt:.6g}); bound = {bound:.6g} at nu = {nu_star:g}; "
          f"max box dimension = {report['max_box_dimension']:.4g}")
    return EXIT_OK if report["bound_ge_empirical"] else EXIT_FAIL


def cmd_dimension(cfg, outdir, threads=1):
    """Covering numbers over the eps range and the nu-sweep of the dimension bound."""
    del threads
    const = cfg.calibrated_constants()
    eta, K = cfg["attractor.eta"], cfg["instance.K"]
    kappa = smoothing_constant(const, cfg["attractor.t_tilde"])
    nus, bounds, nu_star, bound = _nu_sweep(cfg, kappa)
    er = cfg["attractor.eps_range"]
    rows = []
    for e in np.geomspace(er[0], er[1], cfg["attractor.eps_count"]):
        cov = covering_number(eta, e, K)
        rows.append([e, cov.log2_count, cov.modes, cov.tail, int(cov.truncated)])
    files = []
    for name, header, data in (("covering.csv", ["eps", "log2_count", "modes", "tail", "truncated"], rows),
                               ("nu_sweep.csv", ["nu", "bound"], list(zip(nus, bounds)))):
        f = os.path.join(outdir, name)
        _write_rows(f, header, data)
        files.append(f)
    f = os.path.join(outdir, "dimension.json")
    _dump_json({"eta": eta, "K": K, "kappa": kappa, "nu_argmin": nu_star, "dimension_bound": bound}, f)
    files.append(f)
    write_manifest(outdir, "dimension", cfg, files)
    print(f"kappa = {kappa:.6g}; bound = {bound:.6g} at nu = {nu_star:g}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="pathmild",
        description="Pathwise mild solutions and random attractors for parabolic SPDEs.",
        epilog=f"Environment overrides: {ENV_PREFIX}<SECTION>__<KEY>=value, "
               f"e.g. {ENV_PREFIX}DRIFT__SIGMA=0.",
    )
    parser.add_argument("--version", action="version", version=f"pathmild {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file or a run manifest")
    common.add_argument("--seed", type=int, help="run a single fibre (replaces noise.seeds)")
    common.add_argument("--set", action="append", default=[], metavar="K=V", dest="overrides",
                        help="override one dotted config key (repeatable)")
    common.add_argument("--threads", type=int, default=1, metavar="N")
    common.add_argument("--output", metavar="DIR", help="output directory (default: output.dir)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="solve trajectories")
    v = sub.add_parser("verify", parents=[common], help="run the property harness")
    v.add_argument("--suite", default="all", help=f"one of: {', '.join(SUITES)}")
    v.add_argument("--baseline", metavar="FILE", help="compare with a stored verify_results.json")
    sub.add_parser("attractor", parents=[common], help="absorbing sets, clouds, dimension and rates")
    sub.add_parser("dimension", parents=[common], help="covering numbers and the dimension bound")
    return parser


def _resolve(args):
    overrides = parse_set(args.overrides)
    if args.seed is not None:
        overrides["noise.seeds"] = [args.seed]
    cfg = load_config(args.config, overrides)
    outdir = args.output or cfg["output.dir"]
    try:
        os.makedirs(outdir, exist_ok=True)
        probe = os.path.join(outdir, ".pathmild-write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise UsageError(f"output directory {outdir!r} is not writable: {exc.strerror}") from None
    return cfg, outdir


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg, outdir = _resolve(args)
        if args.command == "simulate":
            return cmd_simulate(cfg, outdir, args.threads)
        if args.command == "verify":
            return cmd_verify(cfg, outdir, args.suite, args.threads, args.baseline)
        if args.command == "attractor":
            return cmd_attractor(cfg, outdir, args.threads)
        return cmd_dimension(cfg, outdir, args.threads)
    except (ConfigError, ConditionError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CoverageError as exc:
        print(f"error: noise grid too short: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
