"""Command-line front end.

    sdot1 solve     semi-discrete transport from a density to a discrete measure
    sdot1 gof       goodness-of-fit partition of a sample against a density
    sdot1 quantize  weighted K-means quantization of a density
    sdot1 bounds    discretization error estimates
    sdot1 render    redraw a solve report (or an assignment PGM) as SVG

Exit codes: 0 success, 2 input error, 3 solver did not converge (the report
is still written, with ``converged: false``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import bounds as errbounds
from .geometry import (NONE, Subpixels, read_assignment_pgm, subpixel_count,
                       write_assignment_pgm)
from .measures import (DiscreteMeasure, InputError, check_balance, load_density,
                       load_measure, normalize, parse_bounds, write_measure)
from .multiscale import build_hierarchy, quantize, solve_multiscale
from .optimizer import SolverConfig, SolverError, minimize
from .render import Partition, write_figure, write_svg

EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
VISIBLE_COMMANDS = "{solve,gof,quantize,bounds,render}"


def _version() -> str:
    try:
        return metadata.version("sdot1")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(args, argv, inputs: dict, config: dict, started: float) -> dict:
    return {
        "command": ["sdot1", *argv],
        "inputs": {k: {"path": str(v), "sha256": _digest(v)} for k, v in inputs.items()},
        "config": config,
        "seed": getattr(args, "seed", None),
        "version": _version(),
        "wall_time": round(time.perf_counter() - started, 3),
    }


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=1, allow_nan=False) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _subpixels_arg(s: str):
    if s == "auto":
        return None
    try:
        k = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'auto' or a positive integer") from None
    if k < 1:
        raise argparse.ArgumentTypeError("subpixel factor must be >= 1")
    return k


def _on_off(s: str) -> bool:
    if s not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return s == "on"


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=_positive_float, default=0.05,
                   help="stop when mistransported mass <= epsilon * total mass (default 0.05)")
    p.add_argument("--subpixels", type=_subpixels_arg, default=None, metavar="auto|K",
                   help="subpixels per pixel side (default auto: >= 1000 per site)")
    p.add_argument("--multiscale", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--seed", type=int, default=0, help="seed for the coarsening hierarchy")
    p.add_argument("--memory", type=int, default=10, help="L-BFGS correction pairs")
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--balance-tol", type=float, default=1e-6)
    p.add_argument("--out", default=None, help="JSON report (default stdout)")
    p.add_argument("--svg", default=None, help="write the partition as SVG")
    p.add_argument("--figure", default=None, help="write the partition via matplotlib (PNG/PDF)")
    p.add_argument("--assignment", default=None, help="write the subpixel cell map as PGM")
    p.add_argument("--cells", default=None, help="write per-cell statistics as CSV")
    p.add_argument("--iteration-log", default=None, help="JSON lines, one per iteration")
    p.add_argument("--hierarchy-dump", default=None, help="JSON dump of the coarsening hierarchy")
    p.add_argument("--error-bounds", action="store_true",
                   help="add discretization error bounds to the report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdot1", description="Semi-discrete optimal transport for the Euclidean cost.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True, metavar=VISIBLE_COMMANDS)

    p = sub.add_parser("solve", help="transport a density onto a discrete measure")
    p.add_argument("--density", required=True, help="PGM or CSV grid")
    p.add_argument("--bounds", default=None, help="x0,y0,x1,y1 (default from sidecar or unit width)")
    p.add_argument("--nu", required=True, help="CSV with header x,y,mass")
    p.add_argument("--autonormalize", action="store_true",
                   help="rescale nu to the density's total mass")
    _add_solver_flags(p)

    p = sub.add_parser("gof", help="goodness-of-fit partition for a sample")
    p.add_argument("--density", required=True)
    p.add_argument("--bounds", default=None)
    p.add_argument("--sample", required=True, help="CSV with header x,y (a mass column is ignored)")
    _add_solver_flags(p)

    p = sub.add_parser("quantize", help="weighted K-means quantization of a density")
    p.add_argument("--density", required=True)
    p.add_argument("--bounds", default=None)
    p.add_argument("--n", type=int, required=True, help="number of atoms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("bounds", help="discretization error of nu against a density")
    p.add_argument("--density", required=True)
    p.add_argument("--bounds", default=None)
    p.add_argument("--nu", default=None, help="measure whose quantization error is wanted")
    p.add_argument("--epsilon", type=_positive_float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("render", help="draw a solve report or an assignment PGM")
    p.add_argument("--in", dest="inp", required=True, help="report JSON or assignment PGM")
    p.add_argument("--svg", default=None)
    p.add_argument("--figure", default=None)
    p.add_argument("--bounds", default=None, help="for PGM input (default: pixel units)")
    p.add_argument("--nu", default=None, help="for PGM input: sites to draw")

    # discrete LP oracle, for cross-checks; not listed in the help
    p = sub.add_parser("oracle")
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--order", type=int, default=1, choices=(1, 2))
    p.add_argument("--out", default=None)
    return parser


def _config(args) -> SolverConfig:
    return SolverConfig(epsilon=args.epsilon, memory=args.memory,
                        max_iterations=args.max_iterations)


def _run_solver(args, grid, nu):
    """Solve, streaming the iteration log if asked; returns (report, hierarchy)."""
    cfg = _config(args)
    log = open(args.iteration_log, "w", encoding="utf-8") if args.iteration_log else None

    def callback(rec):
        if log is not None:
            log.write(json.dumps(rec) + "\n")

    try:
        if args.multiscale:
            h = build_hierarchy(nu, seed=args.seed)
            rep = solve_multiscale(grid, nu, cfg, k=args.subpixels, callback=callback, hierarchy=h)
        else:
            h = None
            k = args.subpixels or subpixel_count(nu.n, grid)
            rep = minimize(grid, nu, None, cfg, k=k, callback=callback)
    finally:
        if log is not None:
            log.close()
    return rep, h


def _eccentricity(grid, assignment, k, n) -> np.ndarray:
    """sqrt of the ratio of principal second moments of each cell (>= 1)."""
    sp = Subpixels(grid, k)
    rows, cols = assignment.shape
    s = grid.side / k
    X, Y = np.meshgrid(grid.x_min + (np.arange(cols) + 0.5) * s,
                       grid.y_max - (np.arange(rows) + 0.5) * s)
    lab = assignment.ravel()
    ok = lab != NONE
    lab, m, x, y = lab[ok], sp.masses.ravel()[ok], X.ravel()[ok], Y.ravel()[ok]

    def total(v):
        return np.bincount(lab, weights=v, minlength=n)

    mass = total(m)
    out = np.full(n, np.nan)
    has = mass > 0
    mx, my = total(m * x)[has] / mass[has], total(m * y)[has] / mass[has]
    sxx = total(m * x * x)[has] / mass[has] - mx**2
    syy = total(m * y * y)[has] / mass[has] - my**2
    sxy = total(m * x * y)[has] / mass[has] - mx * my
    half_tr = 0.5 * (sxx + syy)
    disc = np.sqrt(np.maximum(half_tr**2 - (sxx * syy - sxy**2), 0.0))
    lo = np.maximum(half_tr - disc, 0.0)
    hi = half_tr + disc
    with np.errstate(divide="ignore", invalid="ignore"):
        out[has] = np.where(lo > 0, np.sqrt(hi / lo), np.inf)
    return out


def _finite_or_none(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _report_dict(args, argv, inputs, grid, nu, rep, h, started, extra=None) -> dict:
    raster = rep.final_value.raster
    d = {
        "manifest": None,
        "result": {
            "converged": rep.converged,
            "termination_reason": rep.termination_reason,
            "w1": rep.w1_cost,
            "mistransported_mass": rep.final_mistransported_mass,
            "mistransported_fraction": rep.mistransported_fraction,
            "iterations": rep.iterations,
            "evaluations": rep.n_evaluations,
            "subpixel_factor": rep.k,
            "total_mass": rep.total_mass,
        },
        "domain": {"bounds": list(grid.bounds), "nx": grid.nx, "ny": grid.ny},
        "sites": {"x": nu.points[:, 0].tolist(), "y": nu.points[:, 1].tolist(),
                  "mass": nu.masses.tolist()},
        "weights": rep.final_w.tolist(),
        "cell_mass": rep.cell_mass.tolist(),
        "cell_cost": raster.cell_cost.tolist(),
        "phi_history": [float(v) for v in rep.phi_history],
        "levels": rep.levels,
    }
    if h is not None:
        d["hierarchy_sizes"] = [lv.n for lv in h.levels]
    if args.error_bounds:
        mass = grid.total_mass
        d["error_bounds"] = {
            # W1 between the density and its subpixel atoms
            "subpixel_blur": errbounds.blur_error_bound(mass, grid.side / rep.k).to_dict(),
            # W1 between pixel atoms and the piecewise-constant density
            "pixel_blur": errbounds.blur_error_bound(mass, grid.side).to_dict(),
            # mistransported mass moved at most the domain diameter
            "mistransport": {"value": rep.final_mistransported_mass * grid.diameter,
                             "kind": "mistransport_bound"},
        }
    if extra:
        d.update(extra)
    config = {
        "epsilon": args.epsilon, "subpixels": "auto" if args.subpixels is None else args.subpixels,
        "multiscale": "on" if args.multiscale else "off", "memory": args.memory,
        "max_iterations": args.max_iterations, "balance_tol": args.balance_tol,
        "bounds": list(grid.bounds),
    }
    if hasattr(args, "autonormalize"):
        config["autonormalize"] = args.autonormalize
    d["manifest"] = _manifest(args, argv, inputs, config, started)
    return d


def _side_outputs(args, grid, nu, rep, h, title) -> None:
    raster = rep.final_value.raster
    if args.assignment:
        write_assignment_pgm(raster, nu.n, args.assignment)
    if args.cells:
        with open(args.cells, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("index,x,y,target_mass,cell_mass,weight,cost\n")
            cols = np.c_[nu.points, nu.masses, rep.cell_mass, rep.final_w, raster.cell_cost]
            for j, row in enumerate(cols.tolist()):
                fh.write(f"{j}," + ",".join(map(repr, row)) + "\n")
    if args.hierarchy_dump and h is not None:
        _write_json({**h.to_dict(), "levels": rep.levels}, args.hierarchy_dump)
    if args.svg or args.figure:
        part = Partition(grid.bounds, raster.assignment, raster.k, nu.points, nu.masses,
                         grid.values, rep.final_w)
        if args.svg:
            write_svg(part, args.svg, title)
        if args.figure:
            write_figure(part, args.figure, title)


def cmd_solve(args, argv) -> int:
    started = time.perf_counter()
    grid = load_density(args.density, args.bounds)
    nu = load_measure(args.nu)
    bal = check_balance(grid, nu, args.balance_tol)
    if not bal.ok:
        if not args.autonormalize:
            raise InputError(f"mass mismatch: density {bal.mu_mass!r} vs nu {bal.nu_mass!r} "
                             f"(relative gap {bal.relative_gap:.3g}); use --autonormalize")
        nu = normalize(nu, grid.total_mass)
    rep, h = _run_solver(args, grid, nu)
    extra = {"balance": {"mu_mass": bal.mu_mass, "nu_mass": bal.nu_mass,
                         "relative_gap": bal.relative_gap,
                         "rescaled": not bal.ok}}
    report = _report_dict(args, argv, {"density": args.density, "nu": args.nu},
                          grid, nu, rep, h, started, extra)
    report["inputs"] = {"density": _abspath(args.density), "nu": _abspath(args.nu)}
    _side_outputs(args, grid, nu, rep, h, "transport partition")
    report["manifest"]["wall_time"] = round(time.perf_counter() - started, 3)
    _write_json(report, args.out)
    return 0 if rep.converged else EXIT_NOT_CONVERGED


def cmd_gof(args, argv) -> int:
    started = time.perf_counter()
    grid = normalize(load_density(args.density, args.bounds), 1.0)
    sample = load_measure(args.sample, default_mass=1.0)
    nu = DiscreteMeasure(sample.points, np.full(sample.n, 1.0 / sample.n))
    rep, h = _run_solver(args, grid, nu)
    ecc = _eccentricity(grid, rep.final_value.raster.assignment, rep.k, nu.n)
    finite = ecc[np.isfinite(ecc)]
    extra = {"eccentricity": {
        "per_cell": [_finite_or_none(v) for v in ecc],
        "median": float(np.median(finite)) if len(finite) else None,
        "definition": "sqrt(largest / smallest principal second moment of the cell)",
    }}
    report = _report_dict(args, argv, {"density": args.density, "sample": args.sample},
                          grid, nu, rep, h, started, extra)
    report["inputs"] = {"density": _abspath(args.density), "sample": _abspath(args.sample),
                        "density_normalized": True}
    _side_outputs(args, grid, nu, rep, h, "goodness-of-fit partition")
    report["manifest"]["wall_time"] = round(time.perf_counter() - started, 3)
    _write_json(report, args.out)
    return 0 if rep.converged else EXIT_NOT_CONVERGED


def cmd_quantize(args, argv) -> int:
    grid = load_density(args.density, args.bounds)
    nu = quantize(grid, args.n, seed=args.seed)
    write_measure(nu, args.out)
    return 0


def cmd_bounds(args, argv) -> int:
    started = time.perf_counter()
    grid = load_density(args.density, args.bounds)
    out = {"error_bounds": {
        "pixel_blur": errbounds.blur_error_bound(grid.total_mass, grid.side).to_dict()}}
    inputs = {"density": args.density}
    if args.nu:
        nu = load_measure(args.nu)
        bal = check_balance(grid, nu)
        if not bal.ok:
            raise InputError(f"mass mismatch: density {bal.mu_mass!r} vs nu {bal.nu_mass!r}")
        q = errbounds.quantization_error_exact(grid, nu, SolverConfig(epsilon=args.epsilon),
                                               seed=args.seed)
        out["error_bounds"]["quantization_exact"] = q.to_dict()
        inputs["nu"] = args.nu
    out["manifest"] = _manifest(args, argv, inputs, {"epsilon": args.epsilon,
                                                     "bounds": list(grid.bounds)}, started)
    _write_json(out, args.out)
    conv = out["error_bounds"].get("quantization_exact", {}).get("converged", True)
    return 0 if conv else EXIT_NOT_CONVERGED


def _abspath(path) -> str:
    # absolute, so that render works from any directory
    return str(Path(path).resolve())


def _partition_from_report(path) -> Partition:
    try:
        rep = json.loads(Path(path).read_text(encoding="utf-8"))
        inputs = rep["inputs"]
        bnds = rep["domain"]["bounds"]
        sites = rep["sites"]
        weights = np.asarray(rep["weights"], dtype=np.float64)
        k = int(rep["result"]["subpixel_factor"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a solve report ({exc})") from None
    from .geometry import SiteSet, rasterize

    grid = load_density(inputs["density"], ",".join(repr(float(b)) for b in bnds))
    if inputs.get("density_normalized"):
        grid = normalize(grid, 1.0)
    pts = np.c_[sites["x"], sites["y"]]
    raster = rasterize(grid, SiteSet(pts, weights), k)
    return Partition(grid.bounds, raster.assignment, k, pts, np.asarray(sites["mass"]),
                     grid.values, weights)


def _partition_from_pgm(args) -> Partition:
    assign = read_assignment_pgm(args.inp)
    rows, cols = assign.shape
    bnds = (0.0, 0.0, float(cols), float(rows))
    if args.bounds:
        bnds = parse_bounds(args.bounds)
    if args.nu:
        nu = load_measure(args.nu)
        pts, masses = nu.points, nu.masses
    else:
        n = int(assign.max()) + 1 if (assign != NONE).any() else 0
        pts, masses = np.empty((0, 2)), np.empty(0)
        if n:
            # no sites given: mark each cell's centroid with equal discs
            part = Partition(bnds, assign, 1, np.zeros((n, 2)), np.ones(n))
            from .render import cell_centroids

            cen, mass = cell_centroids(part)
            keep = mass > 0
            pts = np.where(keep[:, None], cen, 0.0)
            masses = np.where(keep, 1.0, 1e-12)
    return Partition(bnds, assign, 1, pts, masses)


def cmd_render(args, argv) -> int:
    if not (args.svg or args.figure):
        raise InputError("nothing to do: give --svg and/or --figure")
    path = Path(args.inp)
    if path.suffix.lower() == ".pgm":
        part = _partition_from_pgm(args)
    else:
        part = _partition_from_report(path)
    if args.svg:
        write_svg(part, args.svg, "transport partition")
    if args.figure:
        write_figure(part, args.figure, "transport partition")
    return 0


def cmd_oracle(args, argv) -> int:
    from .oracle import DiscreteTransportProblem, solve_transport

    mu, nu = load_measure(args.mu), load_measure(args.nu)
    try:
        sol = solve_transport(DiscreteTransportProblem.between(mu, nu), args.order)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    value = sol.cost ** (1.0 / args.order)
    _write_json({"order": args.order, "cost": sol.cost, "distance": value}, args.out)
    return 0


COMMANDS = {"solve": cmd_solve, "gof": cmd_gof, "quantize": cmd_quantize,
            "bounds": cmd_bounds, "render": cmd_render, "oracle": cmd_oracle}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, argv)
    except (InputError, SolverError) as exc:
        print(f"sdot1 {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"sdot1 {args.command}: error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
