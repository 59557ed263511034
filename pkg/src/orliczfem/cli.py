"""Command-line interface.

Four subcommands: ``check-weight`` (weight-class diagnostics as JSON),
``interp-test`` (interpolation stability ratio tables as CSV), ``solve``
(one problem from a JSON spec file), and ``study`` (manufactured-solution
convergence report with figures).

Linear algebra thread counts follow the usual BLAS environment variables:
set OMP_NUM_THREADS / OPENBLAS_NUM_THREADS to pin them.  All command outputs
except PNG figures are byte-deterministic for fixed inputs and seeds.
"""

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import nfunc
from .fem import P1Space, RhsFunctional
from .interp import DEFAULT_KINDS, quasi_best_report, stability_ratio_report
from .mesh import structured_rect, write_mesh_text
from .solvers import ProblemSpec, SolverConfig, solve_equation, solve_obstacle
from .study import BOX, run_convergence, shipped_cases
from .weights import (
    Ball,
    BallSampler,
    Weight,
    ap_characteristic,
    check_B_Phi,
    is_A_Phi,
)

THREAD_NOTE = (
    "Thread count is controlled by the BLAS environment variables "
    "OMP_NUM_THREADS and OPENBLAS_NUM_THREADS."
)


def _weight_from_spec(spec):
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return Weight.constant(float(spec.get("value", 1.0)))
    if kind == "radial":
        center = tuple(spec.get("center", (0.5, 0.5)))
        return Weight.radial_power(float(spec["alpha"]), center)
    raise ValueError(f"unknown weight kind {kind!r}")


def _nf_from_spec(spec):
    p = float(spec["p"])
    kappa = float(spec.get("kappa", 0.0))
    return nfunc.make_power(p) if kappa == 0.0 else nfunc.make_shifted_power(p, kappa)


def _add_weight_args(parser):
    parser.add_argument(
        "--weight",
        choices=("constant", "radial"),
        default="constant",
        help="weight family (default constant)",
    )
    parser.add_argument(
        "--value", type=float, default=1.0, help="constant weight value"
    )
    parser.add_argument(
        "--alpha", type=float, default=0.5, help="radial power exponent"
    )
    parser.add_argument(
        "--center",
        type=float,
        nargs=2,
        default=(0.5, 0.5),
        metavar=("X", "Y"),
        help="radial weight center",
    )


def _weight_from_args(args):
    if args.weight == "constant":
        return Weight.constant(args.value)
    return Weight.radial_power(args.alpha, tuple(args.center))


def _add_phi_args(parser):
    parser.add_argument("--p", type=float, default=2.0, help="power exponent p > 1")
    parser.add_argument(
        "--kappa", type=float, default=0.0, help="shift parameter (0 for pure power)"
    )


def _json_text(record):
    return json.dumps(record, indent=2, sort_keys=True) + "\n"


def _write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _emit(path, text):
    if path:
        _write_text(path, text)
    else:
        sys.stdout.write(text)


def cmd_check_weight(args):
    weight = _weight_from_args(args)
    phi = nfunc.make_power(args.p) if args.kappa == 0.0 else nfunc.make_shifted_power(
        args.p, args.kappa
    )
    box = tuple(args.box)
    sampler = BallSampler(
        box,
        n_balls=args.n_balls,
        seed=args.seed,
        singular_points=weight.singular_points(),
    )
    ap = ap_characteristic(weight, args.p, sampler)
    aphi = is_A_Phi(weight, phi, sampler)

    # conjugate-integrability probe on a deterministic handful of balls:
    # one spanning the box plus a radius ladder at each singular point
    x0, y0, x1, y1 = box
    diam = math.hypot(x1 - x0, y1 - y0)
    balls = [Ball(((x0 + x1) / 2.0, (y0 + y1) / 2.0), diam / 2.0)]
    for s in weight.singular_points():
        balls.extend(Ball(s, r) for r in (1e-2 * diam, 0.1 * diam, diam))
    bres = [check_B_Phi(weight, phi, b) for b in balls]
    bphi = {
        "finite": all(r.finite for r in bres),
        "worst_min_value": max(r.min_value for r in bres),
        "n_balls": len(balls),
    }

    record = {
        "weight": weight.describe(),
        "phi": {"p": args.p, "kappa": args.kappa},
        "characteristic": ap.characteristic,
        "growth_flag": ap.growth_flag,
        "aphi_direct": aphi.direct_score,
        "aphi_indirect": aphi.indirect.characteristic,
        "aphi_verdict": aphi.verdict,
        "bphi": bphi,
        "n_balls": len(sampler),
        "seed": args.seed,
    }
    _emit(args.out, _json_text(record))
    return 0


def _ratio_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["level", "h", "kind", "max_ratio", "median_ratio"])
    for row in rows:
        writer.writerow(
            [
                row.level,
                repr(float(row.h)),
                row.kind,
                repr(float(row.max_ratio)),
                repr(float(row.median_ratio)),
            ]
        )
    return buf.getvalue()


def cmd_interp_test(args):
    weight = _weight_from_args(args)
    nf = nfunc.make_power(args.p) if args.kappa == 0.0 else nfunc.make_shifted_power(
        args.p, args.kappa
    )
    mesh0 = structured_rect(args.resolution, args.resolution, BOX, pattern=args.pattern)
    kinds = tuple(args.kinds) if args.kinds else DEFAULT_KINDS
    rows = stability_ratio_report(
        mesh0,
        weight,
        nf,
        n_levels=args.levels,
        kinds=kinds,
        seed=args.seed,
        quad_degree=args.quad_degree,
        warmup_levels=args.warmup_levels,
    )
    if args.quasi_best:

        def v(x):
            return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])

        def grad_v(x):
            sx = np.sin(np.pi * x[..., 0])
            cx = np.cos(np.pi * x[..., 0])
            sy = np.sin(np.pi * x[..., 1])
            cy = np.cos(np.pi * x[..., 1])
            return np.pi * np.stack([cx * sy, sx * cy], axis=-1)

        rows = rows + quasi_best_report(
            mesh0,
            weight,
            nf,
            v,
            grad_v,
            n_levels=args.levels,
            quad_degree=args.quad_degree,
        )
    text = _ratio_csv(rows)
    _emit(args.out, text)
    if args.figure:
        from .figures import render_ratio_table

        render_ratio_table(rows, args.figure)
    return 0


def _rhs_from_spec(spec):
    kind = spec.get("kind", "constant")
    if kind == "constant":
        c = float(spec.get("value", 1.0))
        return RhsFunctional(analytic_f=lambda x: np.full(x.shape[:-1], c))
    if kind == "sine":
        a = float(spec.get("amplitude", 1.0))

        def f(x):
            return a * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])

        return RhsFunctional(analytic_f=f)
    raise ValueError(f"unknown rhs kind {kind!r}")


def _obstacle_from_spec(spec):
    kind = spec.get("kind", "constant")
    if kind == "constant":
        c = float(spec.get("value", -0.05))
        return lambda x: np.full(x.shape[:-1], c)
    if kind == "bump":
        center = np.asarray(spec.get("center", (0.5, 0.5)), dtype=float)
        rho = float(spec.get("rho", 0.25))
        height = float(spec.get("height", 0.1))

        def psi(x):
            d = x - center
            s = np.sum(d * d, axis=-1) / rho**2
            return height * np.maximum(0.0, 1.0 - s) ** 2

        return psi
    raise ValueError(f"unknown obstacle kind {kind!r}")


def cmd_solve(args):
    with open(args.problem) as fh:
        prob = json.load(fh)

    mesh_spec = prob.get("mesh", {})
    nx = int(mesh_spec.get("nx", 16))
    ny = int(mesh_spec.get("ny", nx))
    box = tuple(mesh_spec.get("box", BOX))
    pattern = mesh_spec.get("pattern", "criss_cross")
    mesh = structured_rect(nx, ny, box, pattern=pattern)

    nf = _nf_from_spec(prob.get("phi", {"p": 2.0}))
    weight = _weight_from_spec(prob.get("weight", {"kind": "constant"}))
    space = P1Space(mesh, weight, quad_degree=int(prob.get("quad_degree", 6)))
    rhs = _rhs_from_spec(prob.get("rhs", {"kind": "constant"}))
    obstacle = (
        _obstacle_from_spec(prob["obstacle"]) if prob.get("obstacle") else None
    )
    spec = ProblemSpec(space, nf, rhs, obstacle=obstacle)
    cfg = SolverConfig(
        tol=float(prob.get("tol", 1e-10)), max_iter=int(prob.get("max_iter", 100))
    )

    record = {
        "problem": os.path.basename(args.problem),
        "kind": "obstacle" if obstacle is not None else "equation",
        "dofs": int(mesh.interior_vertices.size),
        "cells": int(mesh.num_cells),
    }
    if obstacle is not None:
        sol = solve_obstacle(spec, config=cfg)
        u, rep = sol.u, sol.report
        record["active_set_sizes"] = sol.active_sizes
        record["final_active"] = int(sol.active_set.size)
        record["cycles"] = sol.cycles
    else:
        u, rep = solve_equation(spec, config=cfg)
    record["converged"] = rep.converged
    record["iterations"] = rep.iterations
    record["residuals"] = rep.residual_norms
    record["message"] = rep.message

    _emit(args.out, _json_text(record))
    stem = os.path.splitext(args.out)[0] if args.out else "solution"
    mesh_out = args.mesh_out or stem + "_mesh.txt"
    solution_out = args.solution_out or stem + "_solution.txt"
    _write_text(mesh_out, write_mesh_text(mesh))
    _write_text(solution_out, "".join(f"{float(v)!r}\n" for v in u.coeffs))
    if args.figure:
        from .figures import render_solution

        render_solution(u, args.figure)
    if not rep.converged:
        print(f"solver did not converge: {rep.message}", file=sys.stderr)
        return 1
    return 0


def _case_from_file(path):
    with open(path) as fh:
        spec = json.load(fh)
    from .study import manufactured_equation_case, manufactured_obstacle_case

    kind = spec.get("kind", "equation")
    weight = _weight_from_spec(spec.get("weight", {"kind": "constant"}))
    name = spec.get("name", os.path.splitext(os.path.basename(path))[0])
    common = {"name": name}
    if "levels" in spec:
        common["levels"] = int(spec["levels"])
    if kind == "equation":
        return manufactured_equation_case(
            float(spec.get("p", 2.0)),
            float(spec.get("kappa", 0.0)),
            weight,
            shape=spec.get("shape", "sine"),
            center=tuple(spec.get("center", (0.5, 0.5))),
            rho=float(spec.get("rho", 0.25)),
            rhs_mode=spec.get("rhs_mode", "exact_gradient"),
            **common,
        )
    if kind == "obstacle":
        return manufactured_obstacle_case(
            float(spec.get("p", 2.0)),
            kappa=float(spec.get("kappa", 0.0)),
            weight=weight,
            center=tuple(spec.get("center", (0.5, 0.5))),
            rho=float(spec.get("rho", 0.35)),
            contact_radius=float(spec.get("contact_radius", 0.15)),
            eta0=float(spec.get("eta0", 100.0)),
            g0=float(spec.get("g0", 5e4)),
            no_contact=bool(spec.get("no_contact", False)),
            **common,
        )
    raise ValueError(f"unknown case kind {kind!r}")


def cmd_study(args):
    cases = shipped_cases()
    if args.list:
        for name in sorted(cases):
            case = cases[name]
            print(f"{name}  ({case.kind}, p={case.p:g}, levels={case.levels})")
        return 0
    if not args.case:
        print("--case is required (see --list for shipped names)", file=sys.stderr)
        return 2
    if args.case in cases:
        case = cases[args.case]
    elif os.path.exists(args.case):
        case = _case_from_file(args.case)
    else:
        print(
            f"unknown case {args.case!r}; shipped cases: {', '.join(sorted(cases))}",
            file=sys.stderr,
        )
        return 2

    report = run_convergence(
        case,
        levels=args.levels,
        quad_degree=args.quad_degree,
        base_resolution=args.base_resolution,
    )
    _emit(args.out, report.to_json())
    if args.csv:
        _write_text(args.csv, report.to_csv())

    if not args.no_figures and args.out:
        from .figures import render_convergence, render_solution

        stem = os.path.splitext(args.out)[0]
        if any(r["quasinorm_error"] is not None for r in report.levels):
            render_convergence(report, stem + "_convergence.png")
        if report.final_solution is not None:
            render_solution(report.final_solution, stem + "_solution.png", title=case.name)

    if report.failure is not None:
        print(report.failure, file=sys.stderr)
        return 1
    last = report.levels[-1]
    print(
        f"{case.name}: {len(report.levels)} levels, "
        f"final error {last['quasinorm_error']:.6e}, last EOC {last['eoc']:.4f}"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="orliczfem",
        description="Weighted Orlicz P1 finite element toolkit.",
        epilog=THREAD_NOTE,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pw = sub.add_parser(
        "check-weight", help="weight-class diagnostics as a JSON record"
    )
    _add_weight_args(pw)
    _add_phi_args(pw)
    pw.add_argument("--box", type=float, nargs=4, default=BOX,
                    metavar=("X0", "Y0", "X1", "Y1"))
    pw.add_argument("--n-balls", type=int, default=200)
    pw.add_argument("--seed", type=int, default=0)
    pw.add_argument("--out", default=None, help="output path (default stdout)")
    pw.set_defaults(func=cmd_check_weight)

    pi = sub.add_parser(
        "interp-test", help="interpolation stability ratio tables as CSV"
    )
    _add_weight_args(pi)
    _add_phi_args(pi)
    pi.add_argument("--levels", type=int, default=4)
    pi.add_argument("--resolution", type=int, default=8)
    pi.add_argument("--pattern", default="criss_cross")
    pi.add_argument("--seed", type=int, default=0)
    pi.add_argument("--quad-degree", type=int, default=6)
    pi.add_argument("--warmup-levels", type=int, default=0,
                    help="refinements applied to the test bank before level 0")
    pi.add_argument("--kinds", nargs="+", default=None,
                    help=f"ratio kinds (default: all of {', '.join(DEFAULT_KINDS)})")
    pi.add_argument("--quasi-best", action="store_true",
                    help="append local quasi-best approximation rows")
    pi.add_argument("--figure", default=None, help="optional ratio-trace PNG")
    pi.add_argument("--out", default=None, help="output path (default stdout)")
    pi.set_defaults(func=cmd_interp_test)

    ps = sub.add_parser("solve", help="solve one problem from a JSON spec file")
    ps.add_argument("--problem", required=True, help="problem spec (JSON)")
    ps.add_argument("--out", default=None, help="report JSON path (default stdout)")
    ps.add_argument("--mesh-out", default=None, help="mesh text path")
    ps.add_argument("--solution-out", default=None, help="nodal values path")
    ps.add_argument("--figure", default=None, help="optional solution PNG")
    ps.set_defaults(func=cmd_solve)

    pt = sub.add_parser(
        "study",
        help="manufactured-solution convergence study",
        epilog=THREAD_NOTE,
    )
    pt.add_argument("--case", default=None, help="shipped case name or JSON case file")
    pt.add_argument("--levels", type=int, default=None)
    pt.add_argument("--quad-degree", type=int, default=None)
    pt.add_argument("--base-resolution", type=int, default=None)
    pt.add_argument("--out", default=None, help="report JSON path (default stdout)")
    pt.add_argument("--csv", default=None, help="level table CSV path")
    pt.add_argument("--no-figures", action="store_true",
                    help="skip the PNG figures rendered next to --out")
    pt.add_argument("--list", action="store_true", help="list shipped cases")
    pt.set_defaults(func=cmd_study)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
