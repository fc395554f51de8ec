"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure,
4 failed gradient check, 5 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .assembly import AssemblyError, DensityField, ProblemSpec, load_problem, sample_functions
from .eig import ConvergenceError, NotPositiveDefiniteError
from .optimize import (
    BoxConstraint,
    InfeasibleError,
    MassConstraint,
    OptimizationError,
    OptimizerConfig,
    interior_scan,
    run,
)
from .spectrum import ClusterError, differential, eigenvalues, lambda_fh

log = logging.getLogger("densityeig")

SEED_ENV = "DENSITYEIG_SEED"

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_GRADCHECK, EXIT_VERIFY = 0, 2, 3, 4, 5

DEFAULT_MATRIX = [
    {"label": "m1k1", "m": 1, "k": 1, "n_e": 64, "p": 3, "b": 1.0},
    {"label": "m2k2", "m": 2, "k": 2, "n_e": 64, "p": 4, "b": 1.0},
    {"label": "m2k1", "m": 2, "k": 1, "n_e": 64, "p": 4, "b": 1.0},
]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    output: Path
    seed: int
    problem: Path | None = None
    density: str | None = None
    options: dict = field(default_factory=dict)


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_pair(text):
    try:
        lo, hi = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lower,upper', got {text!r}")
    return lo, hi


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return analysis.DEFAULT_SEED
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer")


def load_inputs(config):
    """Problem definition and density named by the config."""
    if config.problem is None:
        raise ConfigError("--problem is required")
    if not config.problem.exists():
        raise ConfigError(f"problem file {config.problem} does not exist")
    try:
        spec, rho = load_problem(config.problem)
    except (AssemblyError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"invalid problem document: {exc}")
    if config.density:
        rho = parse_density(config.density, spec)
    if rho is None:
        raise ConfigError("no density given (--density or 'rho' in the problem document)")
    return spec, rho


def parse_density(text, spec):
    if text.startswith("uniform:"):
        try:
            value = float(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad uniform density {text!r}")
        return DensityField.uniform(value, spec.n_e, spec.L)
    path = Path(text)
    if not path.exists():
        raise ConfigError(f"density file {path} does not exist")
    doc = json.loads(path.read_text())
    values = doc["rho"] if isinstance(doc, dict) else doc
    rho = DensityField(values, L=spec.L)
    if rho.n_e != spec.n_e:
        raise ConfigError(f"density has {rho.n_e} entries, problem has {spec.n_e} elements")
    return rho


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_plain) + "\n")


def cmd_solve(config):
    spec, rho = load_inputs(config)
    count = config.options.get("count") or min(10, spec.dof)
    if count > spec.dof:
        raise ConfigError(f"count exceeds dof ({count} > {spec.dof})")
    dec = eigenvalues(spec, rho, count)
    _write_rows(config.output / "eigenvalues.csv", ["n", "lambda", "mu"],
                [(n + 1, lam, 1.0 / (lam + spec.b) if lam + spec.b != 0 else float("inf"))
                 for n, lam in enumerate(dec.lambdas)])
    xs, vals = sample_functions(spec, dec.vectors, 10 * (spec.p + 1))
    _write_rows(config.output / "eigenfunctions.csv",
                ["x"] + [f"u_{n + 1}" for n in range(count)],
                [(x, *row) for x, row in zip(xs, vals)])
    return EXIT_OK


def gradcheck(spec, rho, F, h, directions=20, seed=analysis.DEFAULT_SEED):
    """Analytic vs central-difference derivative of Lambda_{F,h} along random
    directions rho * z (z standard normal), plus the Euler relation along rho."""
    grad = differential(spec, rho, F, h)
    rng = np.random.default_rng(seed)
    step = 1e-5 * (1.0 + rho.values.max())
    rows = []
    for i in range(directions):
        v = rho.values * rng.standard_normal(spec.n_e)
        an = grad.apply(v)
        fp = lambda_fh(spec, DensityField(rho.values + step * v, L=spec.L), F, h)
        fm = lambda_fh(spec, DensityField(rho.values - step * v, L=spec.L), F, h)
        fd = (fp - fm) / (2 * step)
        denom = max(abs(an), abs(fd))
        rows.append((str(i), an, fd, abs(an - fd) / denom if denom > 0 else 0.0))
    an = grad.apply(rho.values)
    expect = -h * lambda_fh(spec, rho, F, h)
    denom = max(abs(an), abs(expect))
    rows.append(("euler", an, expect, abs(an - expect) / denom if denom > 0 else 0.0))
    return rows


def cmd_gradcheck(config):
    spec, rho = load_inputs(config)
    F, h = config.options["F"], config.options["h"]
    try:
        rows = gradcheck(spec, rho, F, h, config.options.get("directions", 20), config.seed)
    except ClusterError as exc:
        raise ConfigError(str(exc))
    _write_rows(config.output / "gradcheck.csv", ["direction", "analytic", "reference", "rel_err"], rows)
    worst = max(r[3] for r in rows)
    _write_json(config.output / "gradcheck.json", {"F": F, "h": h, "max_rel_err": worst,
                                                   "pass": worst <= 1e-4})
    if worst > 1e-4:
        print(f"gradient check failed: max relative error {worst:.3e} > 1e-4", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_optimize(config):
    spec, rho = load_inputs(config)
    o = config.options
    if o.get("box") is None or o.get("mass") is None:
        raise ConfigError("optimize needs --box and --mass")
    box = BoxConstraint.uniform(*o["box"], spec.n_e)
    mass = MassConstraint(o["mass"])
    try:
        mass.check(box, rho.widths)
    except InfeasibleError as exc:
        raise ConfigError(str(exc))
    cfg = OptimizerConfig(tol=o.get("tol", 1e-8), max_iter=o.get("max_iter", 2000))
    try:
        trace = run(spec, rho, o["F"], o["h"], o["sense"], box, mass, cfg)
    except ClusterError as exc:
        raise ConfigError(str(exc))
    trace.write(config.output / "trace.csv", config.output / "density.json")
    _write_json(config.output / "optimize.json", {
        "F": o["F"], "h": o["h"], "sense": o["sense"], "objective": trace.objective[-1],
        "pg_norm": trace.pg_norm[-1], "bangbang_fraction": trace.bangbang[-1],
        "iterations": len(trace.objective) - 1, "converged": trace.converged,
        "line_search_failed": trace.line_search_failed,
    })
    return EXIT_OK


def cmd_weakstar(config):
    spec, rho = load_inputs(config)
    o = config.options
    try:
        rep = analysis.weakstar_experiment(spec, rho, o["theta"], o["j_list"],
                                           o.get("count") or 5, o.get("mode", "oscillate"))
    except ValueError as exc:
        raise ConfigError(str(exc))
    d = rep.data
    rows = []
    for i, j in enumerate(d["j"]):
        for n in range(d["deviation"].shape[1]):
            rows.append((int(j), n + 1, float(d["deviation"][i, n]), float(d["sup_distance"][i])))
    _write_rows(config.output / "weakstar.csv", ["j", "n", "deviation", "sup_distance"], rows)
    rep.write_csv(config.output / "weakstar_checks.csv")
    _write_json(config.output / "weakstar.json", _summary(rep))
    return EXIT_OK


def _summary(report, **extra):
    s = report.summary()
    if not np.isfinite(s["worst_margin"]):
        s["worst_margin"] = None
    s.update(extra)
    return s


def verify_problem(entry, seed, break_comb=False):
    """All verification reports for one problem of the matrix."""
    m, k = int(entry["m"]), int(entry["k"])
    n_e = int(entry.get("n_e", 64))
    spec = ProblemSpec.polyharmonic(m, k, n_e, p=entry.get("p"), b=entry.get("b", 1.0))
    x = spec.midpoints()
    rho = DensityField(1.0 + 0.5 * np.sin(np.pi * x / spec.L) ** 2, L=spec.L)
    count = min(10, spec.dof)
    reports = []
    dec = eigenvalues(spec, rho, count)
    reports.append(analysis.identity_checks(dec.lambdas, comb_sign=1.0 if break_comb else -1.0))
    reports.append(analysis.homogeneity_check(spec, rho, count))
    for b in (0.5, 1.0, 10.0):
        reports.append(analysis.t_rho_crosscheck(spec, rho, count, b=b))
    reports.append(analysis.lipschitz_suite(spec, rho, count, pairs=50, seed=seed))
    reports.append(analysis.auchmuty_suite(spec, rho, n_max=count, trials=100, seed=seed))
    reports.append(analysis.garding_lower_bound(spec, rho, count))
    fine = ProblemSpec.polyharmonic(m, k, 256, L=spec.L, p=spec.p, b=spec.b)
    reports.append(analysis.weakstar_experiment(fine, DensityField.uniform(1.0, 256, spec.L),
                                                0.5, [2, 4, 8, 16, 32]))
    if k >= 1:
        box = BoxConstraint.uniform(0.5, 2.0, n_e)
        reports.append(interior_scan(spec, box, MassConstraint(1.25 * spec.L), [1], 1,
                                     samples=100, seed=seed))
    return reports


def _name(report):
    return report.name.replace(" ", "_").replace("=", "")


def cmd_verify(config):
    matrix = config.options.get("matrix")
    if matrix is None:
        matrix = DEFAULT_MATRIX
    if not matrix:
        raise ConfigError("problem matrix is empty")
    checks = []
    for entry in matrix:
        if "m" not in entry or "k" not in entry:
            raise ConfigError(f"matrix entry {entry} needs 'm' and 'k'")
        label = entry.get("label", f"m{entry['m']}k{entry['k']}")
        try:
            reports = verify_problem(entry, config.seed, config.options.get("break_comb", False))
        except AssemblyError as exc:
            raise ConfigError(f"{label}: {exc}")
        outdir = config.output / label
        outdir.mkdir(parents=True, exist_ok=True)
        for rep in reports:
            rep.write_csv(outdir / f"{_name(rep)}.csv")
            checks.append(_summary(rep, problem=label))
    ok = all(c["pass"] for c in checks)
    _write_json(config.output / "summary.json", {"seed": config.seed, "pass": ok, "checks": checks})
    if not ok:
        failed = [f"{c['problem']}/{c['name']}" for c in checks if not c["pass"]]
        print("verification failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "gradcheck": cmd_gradcheck,
    "optimize": cmd_optimize,
    "weakstar": cmd_weakstar,
    "verify": cmd_verify,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="densityeig", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, problem=True):
        p.add_argument("--output", "-o", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                       help=f"random seed (default ${SEED_ENV} or 0x5EED)")
        if problem:
            p.add_argument("--problem", type=Path, required=True, help="problem JSON document")
            p.add_argument("--density", help="density JSON file or 'uniform:<value>'")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("solve", help="eigenvalues and sampled eigenfunctions")
    common(p)
    p.add_argument("--count", type=int)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference derivative")
    common(p)
    p.add_argument("--F", type=_int_list, required=True, help="1-based indices, e.g. 1,2")
    p.add_argument("--h", type=int, default=1)
    p.add_argument("--directions", type=int, default=20)

    p = sub.add_parser("optimize", help="mass-constrained projected gradient")
    common(p)
    p.add_argument("--F", type=_int_list, required=True)
    p.add_argument("--h", type=int, default=1)
    p.add_argument("--sense", choices=("min", "max"), required=True)
    p.add_argument("--box", type=_float_pair, required=True, help="lower,upper")
    p.add_argument("--mass", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=2000)

    p = sub.add_parser("weakstar", help="oscillating-density continuity experiment")
    common(p)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--j-list", type=_int_list, required=True)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--mode", choices=("oscillate", "shift"), default="oscillate")

    p = sub.add_parser("verify", help="run the verification matrix")
    common(p, problem=False)
    p.add_argument("--matrix", type=Path, help="JSON file {\"problems\": [{m, k, ...}, ...]}")
    p.add_argument("--break-comb", action="store_true", help=argparse.SUPPRESS)
    return parser


def make_config(args):
    seed = args.seed if args.seed is not None else _default_seed()
    if seed < 0:
        raise ConfigError("seed must be unsigned")
    options = {k: v for k, v in vars(args).items()
               if k not in ("command", "output", "seed", "problem", "density", "verbose")}
    if args.command == "verify" and args.matrix is not None:
        if not args.matrix.exists():
            raise ConfigError(f"matrix file {args.matrix} does not exist")
        doc = json.loads(args.matrix.read_text())
        options["matrix"] = doc.get("problems", []) if isinstance(doc, dict) else doc
    return RunConfig(command=args.command, output=args.output, seed=seed,
                     problem=getattr(args, "problem", None), density=getattr(args, "density", None),
                     options=options)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = make_config(args)
        config.output.mkdir(parents=True, exist_ok=True)
        return COMMANDS[config.command](config)
    except (ConfigError, AssemblyError, InfeasibleError, ClusterError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NotPositiveDefiniteError, OptimizationError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
