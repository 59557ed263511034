"""P1 finite element core for weighted Orlicz energies.

The space precomputes flat quadrature arrays (cell index, point, weight,
weight-function value per quadrature row) so that integrands varying inside
cells are one vectorized pass; cells touching a blow-up point of the weight
get graded Duffy rows instead of the standard rule.  For piecewise-constant
quantities (P1 gradients) assembly uses the per-cell weighted masses
directly.
"""

import math

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import nfunc
from .quadrature import roots_legendre, triangle_rule
from .weights import Weight

__all__ = [
    "FeFunction",
    "Grad",
    "P1Space",
    "RhsFunctional",
    "modular",
    "luxemburg_norm",
    "energy",
    "assemble_residual",
    "assemble_newton_matrix",
    "prolong",
]


class FeFunction:
    """Nodal P1 function: one coefficient per mesh vertex."""

    def __init__(self, mesh, coeffs, boundary_constrained=False):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (mesh.num_vertices,):
            raise ValueError("coefficient vector must have one entry per vertex")
        if boundary_constrained and np.any(coeffs[mesh.boundary_vertices] != 0.0):
            raise ValueError("boundary-constrained function has nonzero boundary values")
        self.mesh = mesh
        self.coeffs = coeffs
        self.boundary_constrained = boundary_constrained

    def cell_gradients(self, space):
        c = self.mesh.cells
        return np.einsum("ck,ckd->cd", self.coeffs[c], space.grads)

    def evaluate(self, points):
        """Values at points inside the domain (nearest-cell barycentric)."""
        points = np.asarray(points, dtype=float)
        scalar = points.ndim == 1
        pts = points[None, :] if scalar else points.reshape(-1, 2)
        cells, bary = locate_points(self.mesh, pts)
        vals = np.einsum("pk,pk->p", self.coeffs[self.mesh.cells[cells]], bary)
        if scalar:
            return float(vals[0])
        return vals.reshape(points.shape[:-1])

    def copy(self):
        return FeFunction(self.mesh, self.coeffs.copy(), self.boundary_constrained)


class Grad:
    """Marker wrapping an FeFunction so modulars act on its gradient."""

    def __init__(self, fn):
        self.fn = fn


class P1Space:
    """Assembly data for P1 on a mesh with a weight.

    Attributes
    ----------
    grads : (ncells, 3, 2) basis gradients;  areas : (ncells,).
    q_cell, q_x, q_w, q_bary : flat quadrature rows (physical weights,
        without the weight-function factor);  q_omega : weight values.
    omega_cell_mass : (ncells,) int_T omega per cell.
    interior : sorted interior vertex ids;  loc : vertex id -> interior
        position or -1.
    """

    def __init__(self, mesh, weight=None, quad_degree=6):
        self.mesh = mesh
        self.weight = weight if weight is not None else Weight.constant(1.0)
        self.quad_degree = quad_degree
        v = mesh.vertices
        c = mesh.cells
        e1 = v[c[:, 1]] - v[c[:, 0]]
        e2 = v[c[:, 2]] - v[c[:, 0]]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.areas = 0.5 * det
        g = np.empty((len(c), 3, 2))
        for k in range(3):
            xj = v[c[:, (k + 1) % 3]]
            xk = v[c[:, (k + 2) % 3]]
            g[:, k, 0] = xj[:, 1] - xk[:, 1]
            g[:, k, 1] = xk[:, 0] - xj[:, 0]
        self.grads = g / det[:, None, None]
        self._build_quadrature()
        self.omega_cell_mass = np.zeros(len(c))
        np.add.at(self.omega_cell_mass, self.q_cell, self.q_w * self.q_omega)
        self.interior = mesh.interior_vertices
        self.loc = np.full(mesh.num_vertices, -1, dtype=int)
        self.loc[self.interior] = np.arange(len(self.interior))
        self._tree = None

    def _singular_cells(self):
        if not self.weight.is_singular():
            return {}
        v0 = self.mesh.vertices[self.mesh.cells[:, 0]]
        e1 = self.mesh.vertices[self.mesh.cells[:, 1]] - v0
        e2 = self.mesh.vertices[self.mesh.cells[:, 2]] - v0
        det = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])[:, None]
        hits = {}
        for s in self.weight.singular_points():
            dx = np.asarray(s, dtype=float)[None, :] - v0
            l1 = (dx[:, 0] * e2[:, 1] - dx[:, 1] * e2[:, 0]) / det[:, 0]
            l2 = (e1[:, 0] * dx[:, 1] - e1[:, 1] * dx[:, 0]) / det[:, 0]
            b = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)
            for idx in np.flatnonzero(np.all(b >= -1e-12, axis=-1)):
                hits[int(idx)] = np.asarray(s, dtype=float)
        return hits

    def _build_quadrature(self):
        mesh = self.mesh
        rule = triangle_rule(self.quad_degree)
        nq = len(rule.weights)
        singular = self._singular_cells()
        regular = np.array(
            [i for i in range(mesh.num_cells) if i not in singular], dtype=int
        )
        v0 = mesh.vertices[mesh.cells[regular, 0]]
        e1 = mesh.vertices[mesh.cells[regular, 1]] - v0
        e2 = mesh.vertices[mesh.cells[regular, 2]] - v0
        xq = (
            v0[:, None, :]
            + rule.points[None, :, 0:1] * e1[:, None, :]
            + rule.points[None, :, 1:2] * e2[:, None, :]
        )
        wq = 2.0 * self.areas[regular, None] * rule.weights[None, :]
        bary = np.empty((len(regular), nq, 3))
        bary[:, :, 1] = rule.points[None, :, 0]
        bary[:, :, 2] = rule.points[None, :, 1]
        bary[:, :, 0] = 1.0 - bary[:, :, 1] - bary[:, :, 2]
        parts_cell = [np.repeat(regular, nq)]
        parts_x = [xq.reshape(-1, 2)]
        parts_w = [wq.ravel()]
        parts_bary = [bary.reshape(-1, 3)]
        for idx, s in singular.items():
            x, w = _duffy_cell_rows(mesh.vertices[mesh.cells[idx]], s)
            parts_cell.append(np.full(len(w), idx, dtype=int))
            parts_x.append(x)
            parts_w.append(w)
            parts_bary.append(_barycentric_in_cell(mesh.vertices[mesh.cells[idx]], x))
        self.q_cell = np.concatenate(parts_cell)
        self.q_x = np.concatenate(parts_x)
        self.q_w = np.concatenate(parts_w)
        self.q_bary = np.concatenate(parts_bary)
        self.q_omega = self.weight(self.q_x)

    def values_at_quad(self, fn):
        """Values of an FeFunction at every quadrature row."""
        return np.einsum(
            "qk,qk->q", fn.coeffs[self.mesh.cells[self.q_cell]], self.q_bary
        )

    def centroid_tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.mesh.vertices[self.mesh.cells].mean(axis=1))
        return self._tree


def _duffy_cell_rows(corners, s, decades=12, nr_panel=6, na=8):
    """Quadrature rows over a cell containing the blow-up point s: the cell is
    split at s against each edge and each piece graded toward s by a Duffy
    map (degenerate pieces vanish when s sits on a vertex or edge)."""
    xg, wg = roots_legendre(nr_panel)
    xv, wv = roots_legendre(na)
    vline = 0.5 * (xv + 1.0)
    wline = 0.5 * wv
    pts, wts = [], []
    for k in range(3):
        pa, pb = corners[k], corners[(k + 1) % 3]
        ea, eb = pa - s, pb - s
        area2 = abs(ea[0] * eb[1] - ea[1] * eb[0])
        if area2 < 1e-14:
            continue
        P = pa[None, :] + vline[:, None] * (pb - pa)[None, :]
        breaks = np.geomspace(10.0 ** (-decades), 1.0, 2 * decades + 1)
        for a, b in zip(breaks[:-1], breaks[1:]):
            u = 0.5 * (a + b) + 0.5 * (b - a) * xg
            wu = 0.5 * (b - a) * wg
            x = s[None, None, :] + u[:, None, None] * (P[None, :, :] - s[None, None, :])
            w = area2 * (wu * u)[:, None] * wline[None, :]
            pts.append(x.reshape(-1, 2))
            wts.append(w.ravel())
    return np.concatenate(pts), np.concatenate(wts)


def _barycentric_in_cell(corners, pts):
    e1 = corners[1] - corners[0]
    e2 = corners[2] - corners[0]
    det = e1[0] * e2[1] - e1[1] * e2[0]
    dx = pts - corners[0]
    l1 = (dx[:, 0] * e2[1] - dx[:, 1] * e2[0]) / det
    l2 = (e1[0] * dx[:, 1] - e1[1] * dx[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def locate_points(mesh, pts, tree=None):
    """(cell index, barycentric) per point. Points must lie in the domain;
    roundoff outside a cell is clipped to the best candidate."""
    if tree is None:
        tree = cKDTree(mesh.vertices[mesh.cells].mean(axis=1))
    n = len(pts)
    cells = np.full(n, -1, dtype=int)
    bary = np.zeros((n, 3))
    best_def = np.full(n, -np.inf)
    k = min(12, mesh.num_cells)
    _d, cand = tree.query(pts, k=k)
    if cand.ndim == 1:
        cand = cand[:, None]
    v = mesh.vertices
    c = mesh.cells
    for j in range(cand.shape[1]):
        ci = cand[:, j]
        p0 = v[c[ci, 0]]
        e1 = v[c[ci, 1]] - p0
        e2 = v[c[ci, 2]] - p0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        dx = pts - p0
        l1 = (dx[:, 0] * e2[:, 1] - dx[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * dx[:, 1] - e1[:, 1] * dx[:, 0]) / det
        b = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)
        deficiency = b.min(axis=1)
        take = deficiency > best_def
        cells[take] = ci[take]
        bary[take] = b[take]
        best_def[take] = deficiency[take]
    missing = best_def < -1e-9
    if np.any(missing):
        # brute-force fallback for points far from every candidate centroid
        for i in np.flatnonzero(missing):
            b = _barycentric_in_cell_all(mesh, pts[i])
            ci = int(np.argmax(b.min(axis=1)))
            cells[i] = ci
            bary[i] = b[ci]
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    return cells, bary


def _barycentric_in_cell_all(mesh, pt):
    v = mesh.vertices
    c = mesh.cells
    p0 = v[c[:, 0]]
    e1 = v[c[:, 1]] - p0
    e2 = v[c[:, 2]] - p0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    dx = pt[None, :] - p0
    l1 = (dx[:, 0] * e2[:, 1] - dx[:, 1] * e2[:, 0]) / det
    l2 = (e1[:, 0] * dx[:, 1] - e1[:, 1] * dx[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


class RhsFunctional:
    """Right-hand side data L(v).

    ``analytic_f``: density against the weighted measure, contributing
    int omega f v.  ``exact_gradient``: a field g with contribution
    int omega A(g) . grad v, the form used by manufactured solutions.
    ``multiplier_density``: an unweighted density subtracted as - int m v,
    used to plant a prescribed multiplier in constrained test problems.
    """

    def __init__(self, analytic_f=None, exact_gradient=None, multiplier_density=None):
        if analytic_f is None and exact_gradient is None and multiplier_density is None:
            raise ValueError("empty right-hand side")
        self.analytic_f = analytic_f
        self.exact_gradient = exact_gradient
        self.multiplier_density = multiplier_density

    def assemble(self, space, nf):
        mesh = space.mesh
        out = np.zeros(mesh.num_vertices)
        cells_at_q = mesh.cells[space.q_cell]
        if self.analytic_f is not None:
            dens = space.q_w * space.q_omega * self.analytic_f(space.q_x)
            for k in range(3):
                np.add.at(out, cells_at_q[:, k], dens * space.q_bary[:, k])
        if self.exact_gradient is not None:
            a = nfunc.vector_A(nf, self.exact_gradient(space.q_x))
            flux = space.q_w * space.q_omega
            gq = space.grads[space.q_cell]
            for k in range(3):
                np.add.at(
                    out, cells_at_q[:, k], flux * np.einsum("qd,qd->q", a, gq[:, k, :])
                )
        if self.multiplier_density is not None:
            dens = space.q_w * self.multiplier_density(space.q_x)
            for k in range(3):
                np.add.at(out, cells_at_q[:, k], -dens * space.q_bary[:, k])
        return out


def _magnitudes_at_quad(space, v):
    """|v| at every quadrature row for the supported argument kinds."""
    if isinstance(v, Grad):
        g = v.fn.cell_gradients(space)
        return np.linalg.norm(g, axis=1)[space.q_cell]
    if isinstance(v, FeFunction):
        return np.abs(space.values_at_quad(v))
    vals = np.asarray(v(space.q_x), dtype=float)
    if vals.ndim == 2:
        return np.linalg.norm(vals, axis=1)
    return np.abs(vals)


def modular(space, nf, v):
    """int_Omega omega Phi(|v|) for an FeFunction, Grad(FeFunction), or callable."""
    mags = _magnitudes_at_quad(space, v)
    with np.errstate(over="ignore"):
        return float(np.dot(space.q_w * space.q_omega, nf.phi(mags)))


def luxemburg_norm(space, nf, v, rel_tol=1e-12):
    """inf { lam > 0 : int omega Phi(|v|/lam) <= 1 } by log-bisection on
    cached point values."""
    mags = _magnitudes_at_quad(space, v)
    dens = space.q_w * space.q_omega
    peak = float(mags.max(initial=0.0))
    if peak == 0.0:
        return 0.0

    def rho(lam):
        with np.errstate(over="ignore"):
            vals = nf.phi(mags / lam)
        total = float(np.dot(dens, vals))
        return total if math.isfinite(total) else math.inf

    lo = hi = peak
    while rho(hi) > 1.0:
        hi *= 4.0
        if hi > 1e300:
            raise nfunc.DivergenceError("no finite normalizing scale found")
    while rho(lo) <= 1.0:
        lo /= 4.0
        if lo < 1e-300:
            # the modular stays below one at every positive scale
            return 0.0
    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if rho(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def energy(space, nf, u, rhs_vector):
    """J(u) = int omega Phi(|grad u|) - F . u with F preassembled."""
    g = u.cell_gradients(space)
    r = np.linalg.norm(g, axis=1)
    with np.errstate(over="ignore"):
        j = float(np.dot(space.omega_cell_mass, nf.phi(r)))
    return j - float(np.dot(rhs_vector, u.coeffs))


def assemble_residual(space, nf, u, rhs_vector):
    """Full residual vector R_i = int omega A(grad u) . grad phi_i - F_i."""
    g = u.cell_gradients(space)
    a = nfunc.vector_A(nf, g) * space.omega_cell_mass[:, None]
    out = -np.asarray(rhs_vector, dtype=float).copy()
    c = space.mesh.cells
    for k in range(3):
        np.add.at(out, c[:, k], np.einsum("cd,cd->c", a, space.grads[:, k, :]))
    return out


def assemble_newton_matrix(space, nf, u, eps_reg=1e-10):
    """CSR matrix of int omega grad phi_j . DA(grad u) grad phi_i over all
    vertex pairs; callers restrict to the free unknowns."""
    g = u.cell_gradients(space)
    da = nfunc.linearized_A(nf, g, eps_reg=eps_reg)
    da = da * space.omega_cell_mass[:, None, None]
    local = np.einsum("cia,cab,cjb->cij", space.grads, da, space.grads)
    c = space.mesh.cells
    rows = np.repeat(c, 3, axis=1).ravel()
    cols = np.tile(c, (1, 3)).ravel()
    n = space.mesh.num_vertices
    return sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(n, n)
    ).tocsr()


def prolong(u, fine_mesh):
    """Carry a P1 function to the uniform refinement of its mesh (exactly)."""
    info = fine_mesh.refined_from
    if not info or info.get("parent") is not u.mesh:
        raise ValueError("fine mesh is not the uniform refinement of the function's mesh")
    edges = info["edge"]
    nv = u.mesh.num_vertices
    coeffs = np.empty(fine_mesh.num_vertices)
    coeffs[:nv] = u.coeffs
    coeffs[nv:] = 0.5 * (u.coeffs[edges[:, 0]] + u.coeffs[edges[:, 1]])
    return FeFunction(fine_mesh, coeffs, u.boundary_constrained)
