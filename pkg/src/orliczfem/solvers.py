"""Damped Newton and primal-dual active-set solvers.

The equation solver runs a line-searched Newton iteration on the energy
J(u) = int omega Phi(|grad u|) - F(u) over the free coefficients, with a
diagonally preconditioned gradient-flow fallback when a Newton direction is
rejected.  The obstacle solver wraps the same inner iteration in a
primal-dual active-set loop (join when a coefficient dips below the
obstacle, stay active while the multiplier is positive), with a projected
diagonal sweep fallback if active sets ever cycle.
"""

import numpy as np
import scipy.sparse.linalg as spla

from .fem import (
    FeFunction,
    RhsFunctional,
    assemble_newton_matrix,
    assemble_residual,
    energy,
)
from .interp import pp_interpolate

__all__ = [
    "ProblemSpec",
    "SolverConfig",
    "SolveReport",
    "ObstacleSolution",
    "solve_equation",
    "solve_obstacle",
    "discrete_multiplier",
]


class ProblemSpec:
    """Space, N-function, right-hand side, and an optional obstacle."""

    def __init__(self, space, nf, rhs, obstacle=None):
        self.space = space
        self.nf = nf
        self.rhs = rhs
        self.obstacle = obstacle

    def rhs_vector(self):
        if isinstance(self.rhs, RhsFunctional):
            return self.rhs.assemble(self.space, self.nf)
        return np.asarray(self.rhs, dtype=float)


class SolverConfig:
    def __init__(
        self,
        tol=1e-10,
        max_iter=100,
        armijo=1e-4,
        backtrack=0.5,
        ls_max=60,
        active_set_max_cycles=50,
        eps_reg=1e-10,
        fallback_sweeps=400,
    ):
        self.tol = tol
        self.max_iter = max_iter
        self.armijo = armijo
        self.backtrack = backtrack
        self.ls_max = ls_max
        self.active_set_max_cycles = active_set_max_cycles
        self.eps_reg = eps_reg
        self.fallback_sweeps = fallback_sweeps


class SolveReport:
    def __init__(self):
        self.converged = False
        self.iterations = 0
        self.residual_norms = []
        self.line_search_steps = []
        self.fallback_steps = 0
        self.message = ""

    def __repr__(self):
        tail = self.residual_norms[-1] if self.residual_norms else float("nan")
        return (
            f"SolveReport(converged={self.converged}, iterations={self.iterations}, "
            f"final_residual={tail:.3e}, fallbacks={self.fallback_steps})"
        )


class ObstacleSolution:
    """Solution function, active coefficient set, nodal multiplier, report."""

    def __init__(self, u, active_set, multiplier, report, cycles, active_sizes=()):
        self.u = u
        self.active_set = active_set
        self.multiplier = multiplier
        self.report = report
        self.cycles = cycles
        self.active_sizes = list(active_sizes)


def _try_line_search(space, nf, rhs_vec, coeffs, free, d, slope, e0, cfg):
    """Backtracking Armijo search; returns (accepted coeffs or None, tries)."""
    t = 1.0
    for tries in range(1, cfg.ls_max + 1):
        cand = coeffs.copy()
        cand[free] += t * d
        e1 = energy(space, nf, FeFunction(space.mesh, cand), rhs_vec)
        if np.isfinite(e1) and e1 <= e0 + cfg.armijo * t * slope:
            return cand, tries
        t *= cfg.backtrack
    return None, cfg.ls_max


def _newton(space, nf, rhs_vec, coeffs, free, cfg, report):
    """Line-searched Newton on the coefficients indexed by the bool mask
    ``free``; everything else is held fixed.  Mutates and returns coeffs."""
    if not np.any(free):
        report.converged = True
        return coeffs
    for _ in range(cfg.max_iter):
        u = FeFunction(space.mesh, coeffs)
        r_full = assemble_residual(space, nf, u, rhs_vec)
        r = r_full[free]
        rn = float(np.abs(r).max())
        report.residual_norms.append(rn)
        if rn <= cfg.tol:
            report.converged = True
            return coeffs
        jac = assemble_newton_matrix(space, nf, u, eps_reg=cfg.eps_reg)
        jff = jac[free][:, free].tocsc()
        diag = np.maximum(jac.diagonal()[free], 1e-300)
        with np.errstate(all="ignore"):
            try:
                d = spla.spsolve(jff, -r)
            except Exception:
                d = None
        if d is None or not np.all(np.isfinite(d)):
            d = -r / diag
            report.fallback_steps += 1
        slope = float(r @ d)
        if slope >= 0.0:
            d = -r / diag
            slope = float(r @ d)
            report.fallback_steps += 1
        # full-step fast path: residual contraction certifies progress where
        # energy differences sit below the roundoff floor of the energy
        full = coeffs.copy()
        full[free] += d
        rn_full = float(
            np.abs(
                assemble_residual(space, nf, FeFunction(space.mesh, full), rhs_vec)[free]
            ).max()
        )
        if np.isfinite(rn_full) and rn_full <= 0.5 * rn:
            coeffs = full
            report.iterations += 1
            report.line_search_steps.append(0)
            continue
        e0 = energy(space, nf, u, rhs_vec)
        cand, tries = _try_line_search(space, nf, rhs_vec, coeffs, free, d, slope, e0, cfg)
        if cand is None:
            d = -r / diag
            slope = float(r @ d)
            cand, tries = _try_line_search(
                space, nf, rhs_vec, coeffs, free, d, slope, e0, cfg
            )
            report.fallback_steps += 1
            if cand is None:
                report.message = "line search stalled"
                return coeffs
        coeffs = cand
        report.iterations += 1
        report.line_search_steps.append(tries)
    u = FeFunction(space.mesh, coeffs)
    rn = float(np.abs(assemble_residual(space, nf, u, rhs_vec)[free]).max())
    report.residual_norms.append(rn)
    report.converged = rn <= cfg.tol
    if not report.converged:
        report.message = "iteration budget exhausted"
    return coeffs


def solve_equation(spec, config=None, u0=None):
    """Solve the unconstrained discrete problem with zero boundary values."""
    cfg = config or SolverConfig()
    space = spec.space
    mesh = space.mesh
    rhs_vec = spec.rhs_vector()
    if u0 is not None:
        if u0.mesh is not mesh:
            raise ValueError("initial guess lives on a different mesh")
        coeffs = u0.coeffs.copy()
    else:
        coeffs = np.zeros(mesh.num_vertices)
    coeffs[mesh.boundary_vertices] = 0.0
    free = np.zeros(mesh.num_vertices, dtype=bool)
    free[mesh.interior_vertices] = True
    report = SolveReport()
    coeffs = _newton(space, nf=spec.nf, rhs_vec=rhs_vec, coeffs=coeffs,
                     free=free, cfg=cfg, report=report)
    return FeFunction(mesh, coeffs, boundary_constrained=True), report


def discrete_multiplier(space, nf, u, rhs_vector):
    """Nodal multiplier lambda_i = int omega A(grad u).grad phi_i - F_i.

    Nonnegative on the active set of an obstacle solution and within solver
    tolerance of zero at free interior coefficients.
    """
    return assemble_residual(space, nf, u, rhs_vector)


def _obstacle_coefficients(spec):
    obstacle = spec.obstacle
    mesh = spec.space.mesh
    if obstacle is None:
        raise ValueError("problem spec has no obstacle")
    if isinstance(obstacle, FeFunction):
        if obstacle.mesh is not mesh:
            raise ValueError("obstacle lives on a different mesh")
        return obstacle.coeffs.copy()
    return pp_interpolate(mesh, obstacle).coeffs


def _projected_fallback(space, nf, rhs_vec, coeffs, interior, psi, cfg, report):
    """Damped projected diagonal sweeps; a safe slow path used only if the
    active-set loop cycles."""
    for _ in range(cfg.fallback_sweeps):
        u = FeFunction(space.mesh, coeffs)
        r = assemble_residual(space, nf, u, rhs_vec)
        diag = np.maximum(
            assemble_newton_matrix(space, nf, u, eps_reg=cfg.eps_reg).diagonal(),
            1e-300,
        )
        cand = coeffs[interior] - 0.5 * r[interior] / diag[interior]
        coeffs[interior] = np.maximum(psi[interior], cand)
        report.fallback_steps += 1
        contact = coeffs[interior] <= psi[interior]
        stat = np.abs(np.where(contact, np.minimum(r[interior], 0.0), r[interior]))
        if float(stat.max(initial=0.0)) <= cfg.tol:
            report.converged = True
            return coeffs
    report.message = "projected fallback budget exhausted"
    return coeffs


def solve_obstacle(spec, config=None, u0=None):
    """Primal-dual active-set solution of the discrete obstacle problem."""
    cfg = config or SolverConfig()
    space = spec.space
    mesh = space.mesh
    nf = spec.nf
    rhs_vec = spec.rhs_vector()
    psi = _obstacle_coefficients(spec)
    interior = np.zeros(mesh.num_vertices, dtype=bool)
    interior[mesh.interior_vertices] = True

    coeffs = np.zeros(mesh.num_vertices)
    if u0 is not None:
        if u0.mesh is not mesh:
            raise ValueError("initial guess lives on a different mesh")
        coeffs[:] = u0.coeffs
    coeffs[~interior] = 0.0
    coeffs[interior] = np.maximum(coeffs[interior], psi[interior])

    active = interior & (coeffs <= psi)
    report = SolveReport()
    seen = set()
    cycles = 0
    active_sizes = []
    for _cycle in range(cfg.active_set_max_cycles):
        cycles += 1
        active_sizes.append(int(active.sum()))
        coeffs[active] = psi[active]
        free = interior & ~active
        inner = SolveReport()
        coeffs = _newton(space, nf, rhs_vec, coeffs, free, cfg, inner)
        report.iterations += inner.iterations
        report.residual_norms.extend(inner.residual_norms)
        report.fallback_steps += inner.fallback_steps
        lam = assemble_residual(space, nf, FeFunction(mesh, coeffs), rhs_vec)
        new_active = interior & (
            ((~active) & (coeffs < psi)) | (active & (lam > 0.0))
        )
        if inner.converged and np.array_equal(new_active, active):
            report.converged = True
            break
        key = new_active.tobytes()
        if key in seen:
            report.message = "active set cycled; projected fallback engaged"
            coeffs = _projected_fallback(
                space, nf, rhs_vec, coeffs, interior, psi, cfg, report
            )
            active = interior & (coeffs <= psi)
            break
        seen.add(key)
        active = new_active
    else:
        report.message = "active-set cycle budget exhausted"

    lam = assemble_residual(space, nf, FeFunction(mesh, coeffs), rhs_vec)
    multiplier = np.where(active, lam, 0.0)
    u = FeFunction(mesh, coeffs, boundary_constrained=True)
    return ObstacleSolution(
        u, np.flatnonzero(active), multiplier, report, cycles, active_sizes
    )
