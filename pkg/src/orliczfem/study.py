"""Manufactured solutions, quasi-norm errors, and convergence-rate studies.

A study case packages an exact solution, its data, and a structured mesh
family; running it solves every refinement level with coarse-to-fine warm
starts, measures the natural-distance error

    e_h = ( sum_T int_T omega |V(grad u_ex) - V(grad u_h)|^2 )^{1/2},

and reports experimental orders of convergence together with weight and
regularity diagnostics.  Reports serialize to versioned JSON and a flat CSV
with stable bytes, so reruns under the same seed can be compared verbatim.
"""

import csv
import io
import json
import math

import numpy as np

from . import nfunc
from .fem import FeFunction, P1Space, RhsFunctional, energy, prolong
from .interp import pp_interpolate, scott_zhang
from .mesh import refine_uniform, shape_metrics, structured_rect
from .solvers import ProblemSpec, solve_equation, solve_obstacle
from .weights import BallSampler, Weight, is_A_Phi, is_A_p_Omega

__all__ = [
    "SCHEMA_VERSION",
    "StudyCase",
    "ConvergenceReport",
    "quasinorm_error",
    "manufactured_equation_case",
    "manufactured_obstacle_case",
    "shipped_cases",
    "run_convergence",
]

SCHEMA_VERSION = 1
BOX = (0.0, 0.0, 1.0, 1.0)


def _sine_pair():
    def u(x):
        return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])

    def grad(x):
        sx = np.sin(np.pi * x[..., 0])
        cx = np.cos(np.pi * x[..., 0])
        sy = np.sin(np.pi * x[..., 1])
        cy = np.cos(np.pi * x[..., 1])
        return np.pi * np.stack([cx * sy, sx * cy], axis=-1)

    return u, grad


def _bump_pair(center, rho):
    """Radial C^1 bump (1 - (r/rho)^2)^2 supported in the rho-disk."""
    cx, cy = center

    def u(x):
        s = ((x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2) / rho**2
        return np.maximum(0.0, 1.0 - s) ** 2

    def grad(x):
        d = np.stack([x[..., 0] - cx, x[..., 1] - cy], axis=-1)
        s = np.sum(d * d, axis=-1) / rho**2
        f = np.where(s < 1.0, -(4.0 / rho**2) * (1.0 - s), 0.0)
        return f[..., None] * d

    return u, grad


def _make_nf(p, kappa):
    return nfunc.make_power(p) if kappa == 0.0 else nfunc.make_shifted_power(p, kappa)


class StudyCase:
    """A runnable manufactured problem over a structured mesh family."""

    def __init__(
        self,
        name,
        nf,
        weight,
        u_exact,
        grad_exact,
        rhs,
        p,
        kappa,
        obstacle=None,
        multiplier_density=None,
        contact_gradient=None,
        levels=5,
        base_resolution=8,
        pattern="criss_cross",
        quad_degree=6,
        expected_eoc=1.0,
        eoc_tolerance=0.15,
        eoc_floor=None,
    ):
        self.name = name
        self.nf = nf
        self.weight = weight
        self.u_exact = u_exact
        self.grad_exact = grad_exact
        self.rhs = rhs
        self.p = float(p)
        self.kappa = float(kappa)
        self.obstacle = obstacle
        self.multiplier_density = multiplier_density
        self.contact_gradient = contact_gradient
        self.levels = int(levels)
        self.base_resolution = int(base_resolution)
        self.pattern = pattern
        self.quad_degree = int(quad_degree)
        self.expected_eoc = float(expected_eoc)
        self.eoc_tolerance = float(eoc_tolerance)
        self.eoc_floor = None if eoc_floor is None else float(eoc_floor)

    @property
    def kind(self):
        return "obstacle" if self.obstacle is not None else "equation"

    def base_mesh(self, resolution=None):
        n = self.base_resolution if resolution is None else int(resolution)
        return structured_rect(n, n, BOX, pattern=self.pattern)

    def __repr__(self):
        return f"StudyCase({self.name!r}, kind={self.kind}, p={self.p:g})"


def quasinorm_error(space, nf, u_h, grad_exact):
    """Natural-distance error (int omega |V(grad u_ex) - V(grad u_h)|^2)^{1/2}."""
    vq = nfunc.vector_V(nf, grad_exact(space.q_x))
    vh = nfunc.vector_V(nf, u_h.cell_gradients(space))[space.q_cell]
    diff = np.sum((vq - vh) ** 2, axis=-1)
    return math.sqrt(float(np.dot(space.q_w * space.q_omega, diff)))


def manufactured_equation_case(
    p,
    kappa,
    weight,
    shape="sine",
    center=(0.5, 0.5),
    rho=0.25,
    rhs_mode="exact_gradient",
    name=None,
    levels=5,
):
    """Equation study with a chosen exact solution.

    ``rhs_mode="exact_gradient"`` plants the flux of the exact solution and is
    valid for every (p, kappa, weight).  ``rhs_mode="analytic_poisson"`` is the
    classical cross-check f = 2 pi^2 sin sin, valid only for the unweighted
    quadratic sine case, and guards the analytic right-hand-side path.
    """
    if shape == "sine":
        u, grad = _sine_pair()
    elif shape == "bump":
        u, grad = _bump_pair(center, rho)
    else:
        raise ValueError(f"unknown exact-solution shape {shape!r}")
    if rhs_mode == "exact_gradient":
        rhs = RhsFunctional(exact_gradient=grad)
    elif rhs_mode == "analytic_poisson":
        if p != 2.0 or kappa != 0.0 or shape != "sine" or weight.kind != "constant":
            raise ValueError(
                "the analytic right-hand side is wired for the unweighted "
                "quadratic sine case only"
            )

        def f(x):
            return 2.0 * math.pi**2 * np.sin(np.pi * x[..., 0]) * np.sin(
                np.pi * x[..., 1]
            )

        rhs = RhsFunctional(analytic_f=f)
    else:
        raise ValueError(f"unknown rhs mode {rhs_mode!r}")
    if name is None:
        name = f"eq-p{p:g}-{shape}"
    return StudyCase(
        name=name,
        nf=_make_nf(p, kappa),
        weight=weight,
        u_exact=u,
        grad_exact=grad,
        rhs=rhs,
        p=p,
        kappa=kappa,
        levels=levels,
        expected_eoc=1.0,
        eoc_tolerance=0.15,
    )


def manufactured_obstacle_case(
    p,
    kappa=0.0,
    weight=None,
    center=(0.5, 0.5),
    rho=0.35,
    contact_radius=0.15,
    eta0=100.0,
    g0=5e4,
    no_contact=False,
    name=None,
    levels=4,
):
    """Obstacle study with a known solution and a planted multiplier.

    The exact solution is a radial bump.  The obstacle equals it exactly on
    the closed contact disk and falls away as a C^2 cubic of r^2 outside; the
    right-hand side L(v) = int omega A(grad u_ex) . grad v - int g v plants
    the multiplier density g >= 0 supported inside the disk, so feasibility
    and complementarity hold by construction.  With ``no_contact`` the
    obstacle is dropped strictly below the solution and g vanishes, reducing
    the run to the unconstrained equation.
    """
    weight = weight if weight is not None else Weight.constant(1.0)
    u, grad = _bump_pair(center, rho)
    cx, cy = center
    rd2 = contact_radius**2

    def r2(x):
        return (x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2

    def eta(x):
        base = eta0 * np.maximum(0.0, r2(x) - rd2) ** 3
        return base + 0.05 if no_contact else base

    def grad_eta(x):
        d = np.stack([x[..., 0] - cx, x[..., 1] - cy], axis=-1)
        f = 6.0 * eta0 * np.maximum(0.0, r2(x) - rd2) ** 2
        return f[..., None] * d

    def psi(x):
        return u(x) - eta(x)

    if no_contact:
        g = None
        rhs = RhsFunctional(exact_gradient=grad)
    else:

        def g(x):
            return g0 * np.maximum(0.0, rd2 - r2(x)) ** 3

        rhs = RhsFunctional(exact_gradient=grad, multiplier_density=g)

    # the construction must keep the exact solution admissible everywhere
    axis = np.linspace(0.0, 1.0, 201)
    gx, gy = np.meshgrid(axis, axis)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    if float(np.min(u(pts) - psi(pts))) < -1e-12:
        raise ValueError("obstacle construction exceeds the exact solution")

    if name is None:
        name = f"obs-p{p:g}" + ("-nocontact" if no_contact else "")
    return StudyCase(
        name=name,
        nf=_make_nf(p, kappa),
        weight=weight,
        u_exact=u,
        grad_exact=grad,
        rhs=rhs,
        p=p,
        kappa=kappa,
        obstacle=psi,
        multiplier_density=g,
        contact_gradient=grad_eta,
        levels=levels,
        expected_eoc=1.0,
        eoc_tolerance=0.15,
        eoc_floor=0.45,
    )


def shipped_cases():
    """Name -> StudyCase registry of the cases exercised by the test suite."""
    center = (0.5, 0.5)
    cases = [
        manufactured_equation_case(
            1.5, 0.0, Weight.constant(1.0), shape="sine", name="eq-p15-sine"
        ),
        manufactured_equation_case(
            2.0, 0.0, Weight.constant(1.0), shape="sine", name="eq-p2-sine"
        ),
        manufactured_equation_case(
            3.0,
            0.1,
            Weight.radial_power(0.5, center),
            shape="bump",
            center=(0.3, 0.4),
            rho=0.25,
            name="eq-p3w",
        ),
        manufactured_equation_case(
            2.0,
            0.0,
            Weight.constant(1.0),
            shape="sine",
            rhs_mode="analytic_poisson",
            name="eq-p2-analytic",
        ),
        manufactured_obstacle_case(2.0, name="obs-p2"),
        manufactured_obstacle_case(
            2.5, weight=Weight.radial_power(1.0 / 3.0, center), name="obs-p25w"
        ),
        manufactured_obstacle_case(2.0, no_contact=True, name="obs-nocontact"),
    ]
    return {c.name: c for c in cases}


class ConvergenceReport:
    """Dict-backed study report with versioned, byte-stable serialization."""

    def __init__(self, data):
        self.data = data
        # finest converged iterate, attached by run_convergence; never serialized
        self.final_solution = None

    @property
    def case(self):
        return self.data["case"]

    @property
    def kind(self):
        return self.data["kind"]

    @property
    def levels(self):
        return self.data["levels"]

    @property
    def diagnostics(self):
        return self.data["diagnostics"]

    @property
    def failure(self):
        return self.data["failure"]

    @property
    def eocs(self):
        return [rec["eoc"] for rec in self.levels]

    @property
    def last_pair_eoc(self):
        vals = [e for e in self.eocs if e is not None]
        return vals[-1] if vals else None

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(json.loads(text))

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["level", "h", "dofs", "quasinorm_error", "eoc", "solver_iters"]
        )
        for rec in self.levels:
            writer.writerow(
                [
                    rec["level"],
                    _csv_cell(rec["h"]),
                    rec["dofs"],
                    _csv_cell(rec["quasinorm_error"]),
                    _csv_cell(rec["eoc"]),
                    rec["solver_iters"],
                ]
            )
        return buf.getvalue()

    def __repr__(self):
        eoc = self.last_pair_eoc
        tail = "failed" if self.failure else f"eoc_last={eoc:.3f}" if eoc else "n/a"
        return f"ConvergenceReport({self.case!r}, {len(self.levels)} levels, {tail})"


def _csv_cell(value):
    return "" if value is None else repr(float(value))


def _regularity_indicator(case, n, quad_degree, fd_delta=1e-6):
    """sum_T int_T omega |D[V(grad u_ex)]|^2 on an n x n mesh, the computable
    stand-in for the rate assumption; central differences in space."""
    mesh = structured_rect(n, n, BOX, pattern=case.pattern)
    space = P1Space(mesh, case.weight, quad_degree=quad_degree)

    def field(pts):
        return nfunc.vector_V(case.nf, case.grad_exact(pts))

    jac_sq = np.zeros(len(space.q_x))
    for j in range(2):
        step = fd_delta * (1.0 + np.abs(space.q_x[:, j]))
        xp = space.q_x.copy()
        xm = space.q_x.copy()
        xp[:, j] += step
        xm[:, j] -= step
        d = (field(xp) - field(xm)) / (2.0 * step[:, None])
        jac_sq += np.sum(d * d, axis=-1)
    return float(np.dot(space.q_w * space.q_omega, jac_sq))


def _weight_diagnostics(case, coarse_mesh):
    sampler = BallSampler(
        BOX, n_balls=200, seed=7, singular_points=case.weight.singular_points()
    )
    out = {
        "label": case.weight.describe(),
        "a_phi": is_A_Phi(case.weight, case.nf, sampler).as_dict(),
    }
    if case.kind == "obstacle":
        out["a_2_omega"] = is_A_p_Omega(case.weight, coarse_mesh, 2.0, eps=0.125).as_dict()
    return out


def _multiplier_integrability(case, quad_degree):
    """int g^2 / omega on two meshes; finite means the planted multiplier has
    the square-integrable density the obstacle error theorem assumes."""
    inv = case.weight.pow(-1.0)
    vals = []
    for n in (32, 64):
        mesh = structured_rect(n, n, BOX, pattern=case.pattern)
        space = P1Space(mesh, inv, quad_degree=quad_degree)
        g = case.multiplier_density(space.q_x)
        vals.append(float(np.dot(space.q_w * space.q_omega, g * g)))
    return {
        "coarse": vals[0],
        "fine": vals[1],
        "finite": bool(vals[1] <= 1.5 * max(vals[0], 1e-300)),
    }


def _contact_gap_norm(case, quad_degree, n=64):
    """|| grad(u_ex - psi) ||_{L^2(omega)}, sizing the h^{1/2} term's input."""
    mesh = structured_rect(n, n, BOX, pattern=case.pattern)
    space = P1Space(mesh, case.weight, quad_degree=quad_degree)
    g = case.contact_gradient(space.q_x)
    return math.sqrt(float(np.dot(space.q_w * space.q_omega, np.sum(g * g, axis=-1))))


def run_convergence(case, levels=None, quad_degree=None, base_resolution=None,
                    config=None):
    """Solve the case level by level and assemble its convergence report.

    Levels are warm-started coarse to fine via exact prolongation.  A solver
    failure at any level truncates the run, keeps everything computed so far,
    and marks the report's ``failure`` field.  ``config`` overrides the
    solver configuration on every level.
    """
    n_levels = case.levels if levels is None else int(levels)
    if n_levels < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    qd = case.quad_degree if quad_degree is None else int(quad_degree)
    res = case.base_resolution if base_resolution is None else int(base_resolution)

    mesh = case.base_mesh(res)
    records = []
    failure = None
    u_prev = None
    prev = None
    sigma_max = 0.0
    for level in range(n_levels):
        u0 = None
        if level > 0:
            fine = refine_uniform(mesh)
            if u_prev is not None:
                u0 = prolong(u_prev, fine)
            mesh = fine
        space = P1Space(mesh, case.weight, quad_degree=qd)
        spec = ProblemSpec(space, case.nf, case.rhs, obstacle=case.obstacle)
        metrics = shape_metrics(mesh)
        sigma_max = max(sigma_max, float(metrics["sigma_max"]))
        rec = {
            "level": level,
            "h": float(metrics["h_max"]),
            "dofs": int(len(mesh.interior_vertices)),
        }
        if case.kind == "obstacle":
            sol = solve_obstacle(spec, config=config, u0=u0)
            u_h, rep = sol.u, sol.report
        else:
            sol = None
            u_h, rep = solve_equation(spec, config=config, u0=u0)
        rec["solver_iters"] = int(rep.iterations)
        rec["converged"] = bool(rep.converged)
        rec["final_residual"] = (
            float(rep.residual_norms[-1]) if rep.residual_norms else 0.0
        )
        if not rep.converged:
            rec.update(
                {
                    "quasinorm_error": None,
                    "eoc": None,
                    "l2_weighted_error": None,
                    "energy_gap": None,
                    "c_ba": None,
                }
            )
            records.append(rec)
            failure = f"solver did not converge at level {level}: {rep.message}"
            break

        err = quasinorm_error(space, case.nf, u_h, case.grad_exact)
        rec["quasinorm_error"] = err
        rec["eoc"] = None
        if prev is not None and err > 0.0 and prev[1] > 0.0:
            rec["eoc"] = float(math.log(prev[1] / err) / math.log(prev[0] / rec["h"]))

        dens = space.q_w * space.q_omega
        du = case.u_exact(space.q_x) - space.values_at_quad(u_h)
        rec["l2_weighted_error"] = math.sqrt(float(np.dot(dens, du * du)))

        # energy gap against an admissible interpolant of the exact solution
        rhs_vec = spec.rhs_vector()
        ints = mesh.interior_vertices
        v = np.zeros(mesh.num_vertices)
        v[ints] = case.u_exact(mesh.vertices[ints])
        if case.kind == "obstacle":
            psi = pp_interpolate(mesh, case.obstacle).coeffs
            v[ints] = np.maximum(v[ints], psi[ints])
            feas = float(np.max(psi[ints] - u_h.coeffs[ints], initial=-math.inf))
            rec["feasibility_residual"] = max(0.0, feas)
            rec["complementarity_residual"] = float(
                np.max(np.abs(sol.multiplier * (u_h.coeffs - psi)), initial=0.0)
            )
            rec["active_count"] = int(sol.active_set.size)
        rec["energy_gap"] = float(
            energy(space, case.nf, FeFunction(mesh, v), rhs_vec)
            - energy(space, case.nf, u_h, rhs_vec)
        )

        pi_u = scott_zhang(mesh, case.u_exact)
        base_err = quasinorm_error(space, case.nf, pi_u, case.grad_exact)
        rec["c_ba"] = float(err / base_err) if base_err > 0.0 else None

        records.append(rec)
        u_prev = u_h
        prev = (rec["h"], err)

    diagnostics = {
        "weight": _weight_diagnostics(case, case.base_mesh(res)),
        "sigma_max": sigma_max,
        "quad_degree": qd,
        "base_resolution": res,
    }
    r_coarse = _regularity_indicator(case, 32, qd)
    r_fine = _regularity_indicator(case, 64, qd)
    guaranteed = bool(r_fine <= 1.3 * max(r_coarse, 1e-300))
    regularity = {
        "coarse": r_coarse,
        "fine": r_fine,
        "rate_guaranteed": guaranteed,
    }
    if not guaranteed:
        regularity["note"] = "rate not guaranteed"
    diagnostics["regularity"] = regularity
    if case.kind == "obstacle":
        if case.multiplier_density is not None:
            diagnostics["multiplier_l2_inverse_weight"] = _multiplier_integrability(
                case, qd
            )
        diagnostics["contact_gap_grad_l2"] = _contact_gap_norm(case, qd)

    data = {
        "schema_version": SCHEMA_VERSION,
        "case": case.name,
        "kind": case.kind,
        "p": case.p,
        "kappa": case.kappa,
        "expected_eoc": case.expected_eoc,
        "levels": records,
        "diagnostics": diagnostics,
        "failure": failure,
    }
    report = ConvergenceReport(data)
    report.final_solution = u_prev
    return report
