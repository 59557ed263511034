"""Tests for manufactured cases, quasi-norm errors, and convergence reports."""

import json
import math

import numpy as np
import pytest

from orliczfem import nfunc
from orliczfem.fem import FeFunction, P1Space, locate_points
from orliczfem.mesh import structured_rect
from orliczfem.solvers import SolverConfig
from orliczfem.study import (
    BOX,
    SCHEMA_VERSION,
    ConvergenceReport,
    StudyCase,
    manufactured_equation_case,
    manufactured_obstacle_case,
    quasinorm_error,
    run_convergence,
    shipped_cases,
)
from orliczfem.weights import Weight

CENTER = (0.5, 0.5)


class TestQuasinormError:
    def test_zero_for_nodal_interpolant_of_global_p1(self):
        mesh = structured_rect(5, 5, BOX, pattern="criss_cross")
        space = P1Space(mesh, Weight.radial_power(0.5, CENTER))
        nf = nfunc.make_power(2.5)

        def grad(x):
            out = np.zeros(x.shape)
            out[..., 0] = 0.7
            out[..., 1] = -0.4
            return out

        u_h = FeFunction(mesh, 0.7 * mesh.vertices[:, 0] - 0.4 * mesh.vertices[:, 1])
        assert quasinorm_error(space, nf, u_h, grad) < 1e-12

    def test_quadratic_unweighted_reduces_to_h1_seminorm_error(self):
        mesh = structured_rect(6, 6, BOX, pattern="criss_cross")
        space = P1Space(mesh, Weight.constant(1.0))
        nf = nfunc.make_power(2.0)

        def u(x):
            return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])

        def grad(x):
            sx = np.sin(np.pi * x[..., 0])
            cx = np.cos(np.pi * x[..., 0])
            sy = np.sin(np.pi * x[..., 1])
            cy = np.cos(np.pi * x[..., 1])
            return np.pi * np.stack([cx * sy, sx * cy], axis=-1)

        u_h = FeFunction(mesh, u(mesh.vertices))
        err = quasinorm_error(space, nf, u_h, grad)
        diff = grad(space.q_x) - u_h.cell_gradients(space)[space.q_cell]
        h1 = math.sqrt(float(np.dot(space.q_w, np.sum(diff**2, axis=-1))))
        assert abs(err - h1) < 1e-12 * max(1.0, h1)

    def test_against_stratified_monte_carlo_oracle(self):
        mesh = structured_rect(6, 6, BOX, pattern="criss_cross")
        weight = Weight.radial_power(0.5, CENTER)
        space = P1Space(mesh, weight)
        nf = nfunc.make_power(3.0)

        def grad(x):
            sx = np.sin(np.pi * x[..., 0])
            cx = np.cos(np.pi * x[..., 0])
            sy = np.sin(np.pi * x[..., 1])
            cy = np.cos(np.pi * x[..., 1])
            return np.pi * np.stack([cx * sy, sx * cy], axis=-1)

        rng = np.random.default_rng(17)
        u_h = FeFunction(mesh, rng.standard_normal(mesh.num_vertices))
        err = quasinorm_error(space, nf, u_h, grad)

        # 10^6 jittered-grid samples of omega |V(grad u_ex) - V(grad u_h)|^2
        n = 1000
        k = np.arange(n)
        xs = (k[None, :] + rng.random((n, n))) / n
        ys = (k[:, None] + rng.random((n, n))) / n
        pts = np.stack([xs.ravel(), ys.ravel()], axis=-1)
        cells, _ = locate_points(mesh, pts, tree=space.centroid_tree())
        gh = u_h.cell_gradients(space)[cells]
        diff = nfunc.vector_V(nf, grad(pts)) - nfunc.vector_V(nf, gh)
        vals = weight(pts) * np.sum(diff**2, axis=-1)
        mc = math.sqrt(float(vals.mean()))
        assert abs(err - mc) <= 1e-3 * mc


class TestManufacturedCases:
    def test_registry_names_and_kinds(self):
        cases = shipped_cases()
        assert sorted(cases) == [
            "eq-p15-sine",
            "eq-p2-analytic",
            "eq-p2-sine",
            "eq-p3w",
            "obs-nocontact",
            "obs-p2",
            "obs-p25w",
        ]
        for name, case in cases.items():
            assert case.name == name
            assert case.kind == ("obstacle" if name.startswith("obs") else "equation")
        assert cases["eq-p2-sine"].levels == 5
        assert cases["obs-p2"].levels == 4

    def test_analytic_rhs_guarded_to_quadratic_case(self):
        with pytest.raises(ValueError):
            manufactured_equation_case(
                3.0, 0.0, Weight.constant(1.0), rhs_mode="analytic_poisson"
            )
        with pytest.raises(ValueError):
            manufactured_equation_case(
                2.0,
                0.0,
                Weight.radial_power(0.5, CENTER),
                rhs_mode="analytic_poisson",
            )

    def test_obstacle_construction_stays_admissible(self):
        case = manufactured_obstacle_case(2.0)
        axis = np.linspace(0.0, 1.0, 301)
        gx, gy = np.meshgrid(axis, axis)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        gap = case.u_exact(pts) - case.obstacle(pts)
        assert float(gap.min()) >= -1e-12

    def test_violating_construction_rejected(self):
        # negative eta pushes the obstacle above the exact solution
        with pytest.raises(ValueError):
            manufactured_obstacle_case(2.0, eta0=-1.0)

    def test_no_contact_case_has_strict_gap_and_no_multiplier(self):
        case = manufactured_obstacle_case(2.0, no_contact=True)
        axis = np.linspace(0.0, 1.0, 101)
        gx, gy = np.meshgrid(axis, axis)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        gap = case.u_exact(pts) - case.obstacle(pts)
        assert float(gap.min()) >= 0.05 - 1e-12
        assert case.multiplier_density is None


class TestRunConvergence:
    def test_too_few_levels_rejected(self):
        case = shipped_cases()["eq-p2-sine"]
        with pytest.raises(ValueError):
            run_convergence(case, levels=2)

    def test_h_halves_exactly_and_errors_positive(self):
        rep = run_convergence(shipped_cases()["eq-p2-sine"], levels=3)
        hs = [rec["h"] for rec in rep.levels]
        assert hs == [0.125, 0.0625, 0.03125]
        for rec in rep.levels:
            assert rec["quasinorm_error"] > 0.0
            assert rec["l2_weighted_error"] > 0.0
            assert rec["energy_gap"] >= -1e-12

    def test_eoc_column_and_c_ba_stability(self):
        rep = run_convergence(shipped_cases()["eq-p2-sine"], levels=3)
        assert rep.eocs[0] is None
        assert all(0.8 <= e <= 1.1 for e in rep.eocs[1:])
        c = [rec["c_ba"] for rec in rep.levels]
        assert max(c) <= 1.3 * min(c)

    def test_json_round_trip_byte_identical(self):
        rep = run_convergence(shipped_cases()["obs-p2"], levels=3)
        text = rep.to_json()
        again = ConvergenceReport.from_json(text).to_json()
        assert text == again
        data = json.loads(text)
        assert data["schema_version"] == SCHEMA_VERSION
        assert data["failure"] is None

    def test_rerun_is_deterministic(self):
        case = shipped_cases()["obs-p2"]
        a = run_convergence(case, levels=3)
        b = run_convergence(case, levels=3)
        assert a.to_json() == b.to_json()
        assert a.to_csv() == b.to_csv()

    def test_csv_shape(self):
        rep = run_convergence(shipped_cases()["eq-p2-sine"], levels=3)
        lines = rep.to_csv().strip().split("\n")
        assert lines[0] == "level,h,dofs,quasinorm_error,eoc,solver_iters"
        assert len(lines) == 4
        first = lines[1].split(",")
        assert first[4] == ""  # no EOC on the coarsest level
        second = lines[2].split(",")
        assert float(second[4]) > 0.5

    def test_solver_failure_yields_partial_report(self):
        case = shipped_cases()["eq-p3w"]
        cfg = SolverConfig(tol=1e-10, max_iter=2)
        rep = run_convergence(case, levels=3, config=cfg)
        assert rep.failure is not None
        assert "level 0" in rep.failure
        assert len(rep.levels) == 1
        assert rep.levels[0]["converged"] is False
        assert rep.levels[0]["quasinorm_error"] is None
        # partial reports still serialize cleanly
        assert ConvergenceReport.from_json(rep.to_json()).to_json() == rep.to_json()

    def test_quadrature_robustness(self):
        case = shipped_cases()["eq-p3w"]
        coarse = run_convergence(case, levels=3, quad_degree=6)
        fine = run_convergence(case, levels=3, quad_degree=10)
        for a, b in zip(coarse.levels, fine.levels):
            rel = abs(a["quasinorm_error"] - b["quasinorm_error"]) / a["quasinorm_error"]
            assert rel < 0.01

    def test_weight_and_regularity_diagnostics_embedded(self):
        rep = run_convergence(shipped_cases()["obs-p25w"], levels=3)
        diag = rep.diagnostics
        assert diag["weight"]["a_phi"]["verdict"] is True
        assert diag["weight"]["a_2_omega"]["verdict"] is True
        assert diag["regularity"]["rate_guaranteed"] is True
        assert diag["multiplier_l2_inverse_weight"]["finite"] is True
        assert diag["contact_gap_grad_l2"] > 0.0
        assert diag["sigma_max"] > 0.0

    def test_obstacle_feasibility_and_complementarity(self):
        rep = run_convergence(shipped_cases()["obs-p2"], levels=3)
        for rec in rep.levels:
            assert rec["feasibility_residual"] <= 1e-8
            assert rec["complementarity_residual"] <= 1e-8

    def test_low_regularity_case_flagged_but_runnable(self):
        # solution with a gradient kink too strong for the rate assumption:
        # grad V(grad u) fails square integrability near the center
        beta = 0.4
        cx, cy = CENTER

        def u(x):
            r2 = (x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2
            s = r2 / 0.35**2
            return np.maximum(0.0, 1.0 - s) ** 2 * r2 ** (beta / 2.0)

        def grad(x):
            d = np.stack([x[..., 0] - cx, x[..., 1] - cy], axis=-1)
            r2 = np.sum(d * d, axis=-1)
            s = r2 / 0.35**2
            b = np.maximum(0.0, 1.0 - s) ** 2
            db = np.where(s < 1.0, -(4.0 / 0.35**2) * (1.0 - s), 0.0)
            r2s = np.maximum(r2, 1e-300)
            rb = r2s ** (beta / 2.0)
            drb = beta * r2s ** (beta / 2.0 - 1.0)
            return (db * rb + b * drb)[..., None] * d

        from orliczfem.fem import RhsFunctional

        case = StudyCase(
            name="lowreg",
            nf=nfunc.make_power(2.0),
            weight=Weight.constant(1.0),
            u_exact=u,
            grad_exact=grad,
            rhs=RhsFunctional(exact_gradient=grad),
            p=2.0,
            kappa=0.0,
            levels=3,
        )
        rep = run_convergence(case, levels=3)
        assert rep.failure is None
        assert rep.diagnostics["regularity"]["rate_guaranteed"] is False
        assert rep.diagnostics["regularity"]["note"] == "rate not guaranteed"
