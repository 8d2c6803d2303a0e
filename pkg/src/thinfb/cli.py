"""Command-line experiment orchestration for all thinfb modules.

Subcommands: poly, solve, replace, monitor, dichotomy, epi, seq, fixtures,
report.  Every command is a pure function of (config, fixtures): outputs carry
the config hash and reruns are bit-identical.  Exit codes: 0 success, 2
validation error, 3 numerical non-convergence, 4 falsification report
produced.  THINFB_THREADS caps parallelism in batch commands.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, dichotomy, fixtures, monitors, seqlab, sphere
from .config import ConfigError, config_hash, load_config, validate_params
from .polyhom import HomPoly, basis, cone_check
from .solver import Grid, GridField, SolverConfig, SolverDivergence, solve_top


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("THINFB_THREADS", "1")))
    except ValueError:
        return 1


def _params_of(args: argparse.Namespace) -> dict:
    # the output destination is not part of the experiment: reruns to a
    # different path must carry the same config hash
    skip = {"func", "config", "out"}
    return {
        k: v for k, v in sorted(vars(args).items())
        if k not in skip and not callable(v)
    }


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path, header: list, rows, chash: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config {chash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _parse_radii(spec: str):
    kind, _, rest = spec.partition(":")
    if kind == "geometric":
        a, b, n = rest.split(",")
        return np.geomspace(float(a), float(b), int(n))
    if kind == "list":
        return np.array([float(x) for x in rest.split(",")])
    raise ConfigError("radii", f"expected geometric:a,b,n or list:..., got {spec!r}")


def _load_poly(args) -> HomPoly:
    if getattr(args, "name", None):
        return fixtures.polynomial(args.name)
    if getattr(args, "poly", None):
        with open(args.poly, encoding="utf-8") as fh:
            return HomPoly.from_text(fh.read())
    raise ConfigError("poly", "provide --name or --poly FILE")


def _trace_callable(spec: str):
    if spec.startswith("poly:"):
        with open(spec[5:], encoding="utf-8") as fh:
            return HomPoly.from_text(fh.read()).eval
    return fixtures.boundary_trace(spec)


# ---------------------------------------------------------------------------
# subcommands (each returns an exit code)


def _cmd_poly(args) -> int:
    if args.action == "basis":
        for b in basis(args.dim, args.degree, args.cls):
            sys.stdout.write(b.to_text() + "\n")
        return 0
    p = _load_poly(args)
    if args.action == "show":
        text = p.to_text()
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0
    if args.action == "check":
        mem = cone_check(p)
        harmonic = p.laplacian_residual() == 0.0
        print(f"harmonic: {harmonic}")
        print(f"cone member: {mem.is_plus}  margin: {mem.margin:.3e}")
        return 0 if (harmonic and mem.is_plus) else 4
    raise ConfigError("action", f"unknown poly action {args.action!r}")


def _cmd_solve(args) -> int:
    chash = config_hash(_params_of(args))
    grid = Grid(args.dim, args.nodes)
    cfg = SolverConfig(tol=args.tol, max_iter=args.max_iter, omega=args.omega)
    fld, report = solve_top(_trace_callable(args.boundary), grid, cfg)
    fld.save(args.out)
    side = {
        "config": chash, "version": __version__, "boundary": args.boundary,
        "dim": args.dim, "nodes": args.nodes, "iterations": report.iterations,
        "residual": report.residual, "omega": report.omega,
        "energy": report.energy, "active_count": report.active_count,
    }
    with open(str(args.out) + ".report.json", "w", encoding="utf-8") as fh:
        json.dump(side, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"config {chash}  iterations {report.iterations}  residual {report.residual:.3e}")
    return 0


def _cmd_replace(args) -> int:
    chash = config_hash(_params_of(args))
    p = _load_poly(args)
    if args.eta == "auto":
        geom = sphere.choose_eta(p.dim, p.degree)
    else:
        geom = sphere.geometry_for(p.dim, p.degree, float(args.eta))
    bundle = sphere.replace(p, geom)
    doc = json.loads(bundle.to_json())
    doc["config"] = chash
    doc["version"] = __version__
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    print(
        f"config {chash}  eta {geom.eta}  kappa {bundle.kappa:.6e}  "
        f"sup_v {bundle.sup_v():.3e}"
    )
    return 0


def _cmd_monitor(args) -> int:
    chash = config_hash(_params_of(args))
    fld = GridField.load(args.field)
    radii = _parse_radii(args.radii)
    allowance = args.allowance if args.allowance is not None else 10.0 * fld.grid.h
    violations, series = monitors.weiss_monotonicity_audit(
        fld, args.lam, radii, allowance
    )
    rows = zip(series.radii, series.weiss, series.frequency,
               [allowance] * len(series.radii))
    _write_csv(args.out, ["r", "W", "N", "allowance"], rows, chash)
    print(f"config {chash}  radii {len(series.radii)}  violations {len(violations)}")
    for v in violations:
        print(f"  monotonicity violation: W({v[0]:.4f})={v[2]:.6e} < W({v[1]:.4f})={v[3]:.6e}")
    return 4 if violations else 0


def _cmd_dichotomy(args) -> int:
    chash = config_hash(_params_of(args))
    fld = GridField.load(args.field)
    with open(args.p0, encoding="utf-8") as fh:
        p0 = HomPoly.from_text(fh.read())
    cfg = dichotomy.DichotomyConfig(r0=args.r0)
    log = dichotomy.run_iteration(fld, p0, args.e0, r0=args.r0, n_max=args.n, cfg=cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config": chash, "version": __version__}) + "\n")
        fh.write(log.to_jsonl())
    print(
        f"config {chash}  rungs {len(log.states)}  violations {len(log.violations)}"
        + (f"  halted at rung {log.halted['rung']}" if log.halted else "")
    )
    return 4 if log.violations else 0


def _cmd_epi(args) -> int:
    chash = config_hash(_params_of(args))
    grid = Grid(3, args.nodes)
    allowance = 10.0 * grid.h

    def one(seed):
        w = dichotomy.random_admissible_trace(args.k, seed)
        rep = dichotomy.epiperimetric_gap(w, args.k, grid, allowance=allowance)
        return (seed, rep.gap, rep.ratio if rep.ratio is not None else float("nan"),
                rep.trace_weiss, rep.solution_weiss)

    seeds = range(args.seed, args.seed + args.samples)
    nthreads = _threads()
    if nthreads > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as ex:
            rows = list(ex.map(one, seeds))
    else:
        rows = [one(s) for s in seeds]
    _write_csv(args.out, ["seed", "gap", "ratio", "W_trace", "W_solution"], rows, chash)
    gaps = np.array([r[1] for r in rows])
    ratios = np.array([r[2] for r in rows])
    finite = ratios[np.isfinite(ratios)]
    bad = int(np.sum(gaps < -allowance))
    print(
        f"config {chash}  samples {len(rows)}  min gap {gaps.min():.3e}  "
        f"min ratio {finite.min():.4f}" if finite.size else
        f"config {chash}  samples {len(rows)}  min gap {gaps.min():.3e}"
    )
    return 4 if bad else 0


def _cmd_seq(args) -> int:
    chash = config_hash(_params_of(args))
    w0 = args.w0 if args.w0 is not None else args.A * args.e0 ** (1.0 + args.gamma)
    params = seqlab.SeqParams(
        A=args.A, a=args.a, gamma=args.gamma, e0=args.e0, w0=w0, n_steps=args.steps
    )
    run = seqlab.simulate(params, args.policy)
    rows = [
        (n, run.branches[n] if n < len(run.branches) else 0, run.w[n], run.e[n])
        for n in range(len(run.e))
    ]
    _write_csv(args.out, ["n", "branch", "w", "e"], rows, chash)
    rep = seqlab.verify_bounds(run)
    print(
        f"config {chash}  sum_e {run.e.sum():.6f}  mu {rep.mu}  c {rep.c:.4e}  "
        f"C_env {rep.C_env:.4e}  violations {len(rep.envelope_violations)}"
    )
    return 4 if not rep.ok else 0


def _cmd_fixtures(args) -> int:
    if args.list:
        print("polynomials: " + " ".join(fixtures.polynomial_names()))
        print("traces:      " + " ".join(fixtures.trace_names()))
        return 0
    chash = config_hash(_params_of(args))
    os.makedirs(args.out, exist_ok=True)
    name = args.name
    wrote = []
    if name in fixtures.polynomial_names():
        p = fixtures.polynomial(name)
        path = os.path.join(args.out, f"{name}.poly.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(p.to_text())
        wrote.append(path)
    if name in fixtures.trace_names():
        tr = fixtures.boundary_trace(name)  # validates the name
        assert tr is not None
        path = os.path.join(args.out, f"{name}.trace.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"name": name, "kind": "boundary_trace", "version": __version__,
                 "config": chash},
                fh, sort_keys=True,
            )
            fh.write("\n")
        wrote.append(path)
    if not wrote:
        raise ConfigError("name", f"unknown fixture {name!r}")
    meta = os.path.join(args.out, f"{name}.meta.json")
    with open(meta, "w", encoding="utf-8") as fh:
        json.dump({"name": name, "config": chash, "version": __version__,
                   "files": [os.path.basename(w) for w in wrote]}, fh, sort_keys=True)
        fh.write("\n")
    print(f"config {chash}  wrote {' '.join(wrote)}")
    return 0


def _cmd_report(args) -> int:
    with open(args.log, encoding="utf-8") as fh:
        lines = [json.loads(ln) for ln in fh if ln.strip()]
    rungs = [ln for ln in lines if "rung" in ln]
    summary = next((ln for ln in lines if "rates" in ln), {})
    header = next((ln for ln in lines if "config" in ln), {})
    violations = [ln for ln in rungs if "violation" in ln.get("diagnostics", {})]
    print(f"config {header.get('config', '?')}  rungs {len(rungs)}")
    for ln in rungs:
        print(
            f"  rung {ln['rung']}: branch {ln['branch']}  eps {ln['eps']:.4g}  "
            f"weiss {ln['weiss']:.4g}  scale {ln['scale']:.4g}"
        )
    if summary:
        print(f"rates: {summary.get('rates')}")
        print(f"constants: {summary.get('constants')}")
        if summary.get("halted"):
            print(f"halted: {summary['halted']}")
    print(f"violations: {len(violations)}")
    return 4 if violations else 0


# ---------------------------------------------------------------------------
# parser


def build_parser(defaults: dict | None = None) -> argparse.ArgumentParser:
    defaults = defaults or {}
    ap = argparse.ArgumentParser(prog="thinfb", description=__doc__)
    ap.add_argument("--version", action="version", version=f"thinfb {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def add(name, fn):
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        p.add_argument("--config", default=None, help="key=value config file")
        return p

    p = add("poly", _cmd_poly)
    p.add_argument("action", choices=["basis", "show", "check"])
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--class", dest="cls", default="even", choices=["even", "odd"])
    p.add_argument("--name", default=None)
    p.add_argument("--poly", default=None)
    p.add_argument("--out", default=None)

    p = add("solve", _cmd_solve)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--nodes", type=int, default=65)
    p.add_argument("--boundary", required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=200_000)
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--out", required=True)

    p = add("replace", _cmd_replace)
    p.add_argument("--poly", default=None)
    p.add_argument("--name", default=None)
    p.add_argument("--eta", default="auto")
    p.add_argument("--out", required=True)

    p = add("monitor", _cmd_monitor)
    p.add_argument("--field", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--radii", default="geometric:0.8,0.05,16")
    p.add_argument("--allowance", type=float, default=None)
    p.add_argument("--out", required=True)

    p = add("dichotomy", _cmd_dichotomy)
    p.add_argument("--field", required=True)
    p.add_argument("--p0", required=True)
    p.add_argument("--e0", type=float, default=0.09)
    p.add_argument("--r0", type=float, default=0.5)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--out", required=True)

    p = add("epi", _cmd_epi)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--nodes", type=int, default=33)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("seq", _cmd_seq)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--A", type=float, default=2.0)
    p.add_argument("--a", type=float, default=0.1)
    p.add_argument("--e0", type=float, default=0.05)
    p.add_argument("--w0", type=float, default=None)
    p.add_argument("--policy", default="adversarial")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", required=True)

    p = add("fixtures", _cmd_fixtures)
    p.add_argument("--name", default=None)
    p.add_argument("--out", default=".")
    p.add_argument("--list", action="store_true")

    p = add("report", _cmd_report)
    p.add_argument("--log", required=True)

    # config-file values become option defaults and satisfy required options
    for name, parser in sub.choices.items():
        section = defaults.get(name, {})
        for action in parser._actions:
            if action.dest in section:
                action.default = section[action.dest]
                action.required = False

    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    defaults = {}
    if "--config" in argv:
        path = argv[argv.index("--config") + 1]
        try:
            cfg = load_config(path)
            validate_params(cfg)
            defaults = cfg
        except (ConfigError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    ap = build_parser(defaults)
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverDivergence, sphere.ReplacementDivergence) as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
