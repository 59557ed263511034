"""Quasi-interpolation operators and their stability reports.

Two operators: a simplex-assigned dual-basis operator (projection onto P1,
zero trace preserved through boundary-face assignments) and a ball-average
interpolant whose vertex values are averages over inscribed balls of the
vertex stars (positivity preserving, zero boundary values by construction).
The report helpers measure norm and modular stability ratios of both across
refinement levels on a small bank of test functions.
"""

import math

import numpy as np
import scipy.sparse as sp

from . import nfunc
from .fem import FeFunction, P1Space, prolong
from .mesh import inscribed_ball, patch_of_element, refine_uniform, shape_metrics
from .quadrature import disk_rule, segment_rule, triangle_rule

__all__ = [
    "SzOperator",
    "scott_zhang",
    "PpInterpolant",
    "pp_interpolate",
    "RatioRow",
    "stability_ratio_report",
    "quasi_best_report",
]


class SzOperator:
    """Dual-basis quasi-interpolation with per-vertex simplex assignments.

    Interior vertices average against a dual function on the lowest-indexed
    adjacent cell; boundary vertices use the lowest-indexed adjacent boundary
    face, so functions vanishing on the boundary keep zero trace.  The
    operator is a projection: applied to a P1 function it returns it exactly.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        v = mesh.vertices
        self.assignments = []
        bf = mesh.boundary_faces
        for vid in range(mesh.num_vertices):
            if mesh.vertex_is_boundary[vid]:
                rows = np.flatnonzero(np.any(bf == vid, axis=1))
                face = int(rows.min())
                nodes = bf[face]
                k = int(np.flatnonzero(nodes == vid)[0])
                length = float(np.linalg.norm(v[nodes[1]] - v[nodes[0]]))
                mass = length / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
                coeffs = np.linalg.solve(mass, np.eye(2)[k])
                self.assignments.append(("face", face, nodes.copy(), coeffs))
            else:
                cell = int(mesh.cells_around_vertex(vid)[0])
                nodes = mesh.cells[cell]
                k = int(np.flatnonzero(nodes == vid)[0])
                area = _cell_area(v, nodes)
                mass = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
                coeffs = np.linalg.solve(mass, np.eye(3)[k])
                self.assignments.append(("cell", cell, nodes.copy(), coeffs))

    def interpolate(self, f, degree=8):
        """Apply to a callable (or return a P1 input unchanged, exactly)."""
        if isinstance(f, FeFunction):
            if f.mesh is not self.mesh:
                raise ValueError("function lives on a different mesh")
            return f.copy()
        mesh = self.mesh
        v = mesh.vertices
        rule = triangle_rule(degree)
        sx, sw = segment_rule((degree + 2) // 2)
        out = np.zeros(mesh.num_vertices)
        for vid, (kind, _idx, nodes, coeffs) in enumerate(self.assignments):
            if kind == "cell":
                p0 = v[nodes[0]]
                e1 = v[nodes[1]] - p0
                e2 = v[nodes[2]] - p0
                pts = p0 + rule.points[:, 0:1] * e1 + rule.points[:, 1:2] * e2
                area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
                bary = np.column_stack(
                    [1.0 - rule.points.sum(axis=1), rule.points[:, 0], rule.points[:, 1]]
                )
                psi = bary @ coeffs
                out[vid] = float(area2 * np.dot(rule.weights * psi, f(pts)))
            else:
                a, b = v[nodes[0]], v[nodes[1]]
                pts = a[None, :] + sx[:, None] * (b - a)[None, :]
                length = float(np.linalg.norm(b - a))
                psi = (1.0 - sx) * coeffs[0] + sx * coeffs[1]
                out[vid] = float(length * np.dot(sw * psi, f(pts)))
        return FeFunction(mesh, out)

    def dual_pairing(self, vid, wid):
        """int psi_vid phi_wid over the assignment simplex (diagnostic)."""
        kind, _idx, nodes, coeffs = self.assignments[vid]
        if wid not in nodes:
            return 0.0
        k = int(np.flatnonzero(nodes == wid)[0])
        v = self.mesh.vertices
        if kind == "cell":
            area = _cell_area(v, nodes)
            mass = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
        else:
            length = float(np.linalg.norm(v[nodes[1]] - v[nodes[0]]))
            mass = length / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        return float(mass[k] @ coeffs)


def _cell_area(vertices, nodes):
    e1 = vertices[nodes[1]] - vertices[nodes[0]]
    e2 = vertices[nodes[2]] - vertices[nodes[0]]
    return 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])


def scott_zhang(mesh, f, degree=8):
    return SzOperator(mesh).interpolate(f, degree=degree)


class PpInterpolant:
    """Ball-average interpolant: interior vertex values are averages over the
    inscribed ball of the vertex star; boundary values are zero."""

    def __init__(self, mesh, nr=16, na=32):
        self.mesh = mesh
        self.nr = nr
        self.na = na
        ref_pts, ref_w = disk_rule(nr, na)
        self._ref_pts = ref_pts
        self._ref_w = ref_w / math.pi  # average instead of integral
        self._stars = {}
        for vid in mesh.interior_vertices:
            self._stars[int(vid)] = inscribed_ball(mesh, int(vid))
        self._matrix = None

    def _located(self, vid):
        """(cells, bary) of the scaled ball points within the star."""
        star = self._stars[vid]
        center = self.mesh.vertices[vid]
        pts = center + star.radius * self._ref_pts
        cand = self.mesh.cells[star.cells]
        v = self.mesh.vertices
        p0 = v[cand[:, 0]]
        e1 = v[cand[:, 1]] - p0
        e2 = v[cand[:, 2]] - p0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        dx = pts[None, :, :] - p0[:, None, :]
        l1 = (dx[..., 0] * e2[:, None, 1] - dx[..., 1] * e2[:, None, 0]) / det[:, None]
        l2 = (e1[:, None, 0] * dx[..., 1] - e1[:, None, 1] * dx[..., 0]) / det[:, None]
        bary = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)
        best = np.argmax(bary.min(axis=-1), axis=0)
        rows = np.arange(len(pts))
        chosen = np.clip(bary[best, rows], 0.0, None)
        chosen /= chosen.sum(axis=1, keepdims=True)
        return star.cells[best], chosen, pts

    def matrix(self):
        """Sparse vertex-to-vertex averaging matrix (boundary rows zero)."""
        if self._matrix is None:
            mesh = self.mesh
            block = 3 * len(self._ref_pts)
            rows = np.empty(block * len(self._stars), dtype=np.int64)
            cols = np.empty_like(rows)
            vals = np.empty(rows.shape, dtype=float)
            for i, vid in enumerate(self._stars):
                cells, bary, _pts = self._located(vid)
                sl = slice(i * block, (i + 1) * block)
                rows[sl] = vid
                cols[sl] = mesh.cells[cells].ravel()
                vals[sl] = (self._ref_w[:, None] * bary).ravel()
            n = mesh.num_vertices
            self._matrix = sp.coo_matrix(
                (vals, (rows, cols)), shape=(n, n)
            ).tocsr()
        return self._matrix

    def interpolate(self, f):
        """Apply to an FeFunction (sparse action) or a callable."""
        if isinstance(f, FeFunction):
            if f.mesh is not self.mesh:
                raise ValueError("function lives on a different mesh")
            coeffs = self.matrix() @ f.coeffs
        else:
            coeffs = np.zeros(self.mesh.num_vertices)
            for vid in self._stars:
                star = self._stars[vid]
                pts = self.mesh.vertices[vid] + star.radius * self._ref_pts
                coeffs[vid] = float(np.dot(self._ref_w, f(pts)))
        coeffs[self.mesh.boundary_vertices] = 0.0
        return FeFunction(self.mesh, coeffs, boundary_constrained=True)


def pp_interpolate(mesh, f, nr=16, na=32):
    return PpInterpolant(mesh, nr=nr, na=na).interpolate(f)


class RatioRow:
    def __init__(self, level, h, kind, max_ratio, median_ratio):
        self.level = level
        self.h = h
        self.kind = kind
        self.max_ratio = max_ratio
        self.median_ratio = median_ratio

    def as_dict(self):
        return {
            "level": self.level,
            "h": self.h,
            "kind": self.kind,
            "max_ratio": self.max_ratio,
            "median_ratio": self.median_ratio,
        }

    def __repr__(self):
        return (
            f"RatioRow(level={self.level}, h={self.h:.4g}, kind={self.kind}, "
            f"max={self.max_ratio:.4g}, median={self.median_ratio:.4g})"
        )


DEFAULT_KINDS = (
    "SZ_L1",
    "SZ_weighted_modular",
    "SZ_shifted",
    "PP_Lp",
    "PP_weighted_modular",
    "PP_weighted_approx",
)

SHIFTS = (0.0, 1.0, 10.0)


def _test_bank(mesh, seed):
    """(name, f, grad_f) triples: smooth, kinked pyramid, seeded P1 data."""

    def smooth(x):
        return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])

    def smooth_grad(x):
        sx = np.sin(np.pi * x[..., 0])
        cx = np.cos(np.pi * x[..., 0])
        sy = np.sin(np.pi * x[..., 1])
        cy = np.cos(np.pi * x[..., 1])
        return np.pi * np.stack([cx * sy, sx * cy], axis=-1)

    def pyramid(x):
        return np.maximum(
            0.0,
            1.0 - 4.0 * np.maximum(np.abs(x[..., 0] - 0.5), np.abs(x[..., 1] - 0.5)),
        )

    def pyramid_grad(x):
        dx = x[..., 0] - 0.5
        dy = x[..., 1] - 0.5
        inside = np.maximum(np.abs(dx), np.abs(dy)) < 0.25
        xdom = np.abs(dx) >= np.abs(dy)
        g = np.zeros(x.shape)
        g[..., 0] = np.where(inside & xdom, -4.0 * np.sign(dx), 0.0)
        g[..., 1] = np.where(inside & ~xdom, -4.0 * np.sign(dy), 0.0)
        return g

    rng = np.random.default_rng(seed)
    coeffs = np.zeros(mesh.num_vertices)
    coeffs[mesh.interior_vertices] = rng.standard_normal(len(mesh.interior_vertices))
    rough = FeFunction(mesh, coeffs, boundary_constrained=True)
    return [
        ("smooth", smooth, smooth_grad),
        ("pyramid", pyramid, pyramid_grad),
        ("rough_fe", rough, None),
    ]


def _prolong_bank(bank, fine_mesh):
    """Carry FE bank members onto the refined mesh; each member stays the
    same function across levels so ratio tables can converge."""
    return [
        (name, prolong(f, fine_mesh) if isinstance(f, FeFunction) else f, g)
        for name, f, g in bank
    ]


class _LevelFrame:
    """Per-level integration helpers shared by the report builders."""

    def __init__(self, mesh, weight, quad_degree):
        self.mesh = mesh
        self.space = P1Space(mesh, weight, quad_degree=quad_degree)
        self.h = shape_metrics(mesh)["h"]
        self.h_max = float(self.h.max())
        self.areas = self.space.areas
        self.patches = [patch_of_element(mesh, c) for c in range(mesh.num_cells)]
        self.patch_area = np.array([self.areas[p].sum() for p in self.patches])

    def cell_integrals(self, point_values, weighted):
        """Per-cell integral of a quadrature-row value array."""
        dens = self.space.q_w * (self.space.q_omega if weighted else 1.0)
        return np.bincount(
            self.space.q_cell, weights=dens * point_values,
            minlength=self.mesh.num_cells,
        )

    def patch_sums(self, cell_values):
        return np.array([cell_values[p].sum() for p in self.patches])

    def grad_mags(self, f, grad_f):
        """(per-quad-row magnitudes, per-cell constants or None) of grad f."""
        if isinstance(f, FeFunction):
            cell = np.linalg.norm(f.cell_gradients(self.space), axis=1)
            return cell[self.space.q_cell], cell
        return np.linalg.norm(grad_f(self.space.q_x), axis=-1), None

    def values(self, f):
        if isinstance(f, FeFunction):
            return self.space.values_at_quad(f)
        return np.asarray(f(self.space.q_x), dtype=float)


def _ratio_stats(num_cell, den_patch, zero_over_zero="skip"):
    """Element ratios num_T / den_{S_T}.  Elements with vanishing denominators
    either carry no information (flat test data over the whole patch, default
    "skip") or witness exact reproduction (num also vanishes, "zero")."""
    keep = den_patch > 0.0
    ratios = num_cell[keep] / den_patch[keep]
    if zero_over_zero == "zero":
        exact = ~keep & (num_cell == 0.0)
        ratios = np.concatenate([ratios, np.zeros(int(exact.sum()))])
    if ratios.size == 0:
        return float("nan"), float("nan")
    return float(ratios.max()), float(np.median(ratios))


def _sz_modular_rows(frame, nf_a, sz_mags_cell, mags_q, mags_cell):
    """(per-cell avg of omega Phi_a(|grad Pi v|), patch avg of the input)."""
    with np.errstate(over="ignore"):
        num = nf_a.phi(sz_mags_cell) * frame.space.omega_cell_mass
        if mags_cell is not None:
            den_cell = nf_a.phi(mags_cell) * frame.space.omega_cell_mass
        else:
            den_cell = frame.cell_integrals(nf_a.phi(mags_q), weighted=True)
    num_avg = num / frame.areas
    den_avg = frame.patch_sums(den_cell) / frame.patch_area
    return num_avg, den_avg


def _lp_cell_norms(frame, point_values, p, fe_cell_max=None):
    """Per-cell L^p norms of a quadrature-row value array (p = inf uses the
    per-cell max: exact for P1 data when fe_cell_max is supplied)."""
    if math.isinf(p):
        if fe_cell_max is not None:
            return fe_cell_max
        out = np.zeros(frame.mesh.num_cells)
        np.maximum.at(out, frame.space.q_cell, np.abs(point_values))
        return out
    ints = frame.cell_integrals(np.abs(point_values) ** p, weighted=False)
    return ints ** (1.0 / p)


def _lp_patch_norms(frame, cell_norms, p):
    if math.isinf(p):
        return np.array([cell_norms[pt].max() for pt in frame.patches])
    return frame.patch_sums(cell_norms**p) ** (1.0 / p)


def stability_ratio_report(
    mesh0, weight, nf, n_levels=4, kinds=DEFAULT_KINDS, seed=0, quad_degree=6,
    warmup_levels=0,
):
    """Per-element stability ratios of both operators over a refinement chain.

    Each kind compares, element by element, the bounded side of one of the
    operators' local stability statements against its patch-sized right-hand
    side; the reported max/median are over all elements and all members of
    the seeded test bank.  Level-growth of max_ratio is the numerical
    signature of a missing stability constant.

    ``warmup_levels`` refines that many times before the first reported row;
    the random bank member is drawn on ``mesh0`` and prolonged, so with a
    warmup every reported level sees the same fixed functions and the tables
    can be compared across levels.
    """
    for kind in kinds:
        if kind not in DEFAULT_KINDS:
            raise ValueError(f"unknown ratio kind {kind!r}")
    rows = []
    mesh = mesh0
    bank = _test_bank(mesh0, seed)
    for _ in range(warmup_levels):
        mesh = refine_uniform(mesh)
        bank = _prolong_bank(bank, mesh)
    for level in range(n_levels):
        if level > 0:
            mesh = refine_uniform(mesh)
            bank = _prolong_bank(bank, mesh)
        frame = _LevelFrame(mesh, weight, quad_degree)
        sz = SzOperator(mesh)
        pp = PpInterpolant(mesh)
        samples = {k: [] for k in DEFAULT_KINDS}
        for _name, f, grad_f in bank:
            is_fe = isinstance(f, FeFunction)
            zero_trace = (not is_fe) or f.boundary_constrained
            sz_f = sz.interpolate(f)
            pp_f = pp.interpolate(f)
            mags_q, mags_cell = frame.grad_mags(f, grad_f)
            sz_cell = np.linalg.norm(sz_f.cell_gradients(frame.space), axis=1)
            pp_cell = np.linalg.norm(pp_f.cell_gradients(frame.space), axis=1)

            if "SZ_L1" in kinds:
                num = sz_cell * frame.areas
                den_cell = (
                    mags_cell * frame.areas
                    if mags_cell is not None
                    else frame.cell_integrals(mags_q, weighted=False)
                )
                samples["SZ_L1"].append(_ratio_stats(num, frame.patch_sums(den_cell)))
            if "SZ_weighted_modular" in kinds:
                num, den = _sz_modular_rows(frame, nf, sz_cell, mags_q, mags_cell)
                samples["SZ_weighted_modular"].append(_ratio_stats(num, den))
            if "SZ_shifted" in kinds:
                worst_max, worst_med = 0.0, 0.0
                for a in SHIFTS:
                    nfa = nfunc.shift(nf, a)
                    num, den = _sz_modular_rows(frame, nfa, sz_cell, mags_q, mags_cell)
                    m, md = _ratio_stats(num, den)
                    worst_max, worst_med = max(worst_max, m), max(worst_med, md)
                samples["SZ_shifted"].append((worst_max, worst_med))
            if "PP_Lp" in kinds:
                vals_q = frame.values(f)
                pp_vals_q = frame.values(pp_f)
                fe_max_in = (
                    np.abs(f.coeffs[mesh.cells]).max(axis=1) if is_fe else None
                )
                fe_max_pp = np.abs(pp_f.coeffs[mesh.cells]).max(axis=1)
                for p in (1.0, 2.0, math.inf):
                    tag = "inf" if math.isinf(p) else f"{int(p)}"
                    num = _lp_cell_norms(frame, pp_vals_q, p, fe_cell_max=fe_max_pp)
                    den_cell = _lp_cell_norms(frame, vals_q, p, fe_cell_max=fe_max_in)
                    samples["PP_Lp"].append(
                        (f"PP_Lp[p={tag}]",)
                        + _ratio_stats(num, _lp_patch_norms(frame, den_cell, p))
                    )
                    if zero_trace:
                        gnum = _lp_cell_norms(
                            frame, pp_cell[frame.space.q_cell], p, fe_cell_max=pp_cell
                        )
                        gden = _lp_cell_norms(frame, mags_q, p, fe_cell_max=mags_cell)
                        samples["PP_Lp"].append(
                            (f"PP_Lp[grad,p={tag}]",)
                            + _ratio_stats(gnum, _lp_patch_norms(frame, gden, p))
                        )
            if "PP_weighted_modular" in kinds:
                worst_max, worst_med = 0.0, 0.0
                for a in SHIFTS:
                    nfa = nfunc.shift(nf, a)
                    num, den = _sz_modular_rows(frame, nfa, pp_cell, mags_q, mags_cell)
                    m, md = _ratio_stats(num, den)
                    worst_max, worst_med = max(worst_max, m), max(worst_med, md)
                samples["PP_weighted_modular"].append((worst_max, worst_med))
            if "PP_weighted_approx" in kinds:
                diff_q = frame.values(pp_f) - frame.values(f)
                num = np.sqrt(frame.cell_integrals(diff_q**2, weighted=True))
                if mags_cell is not None:
                    gcell = frame.space.omega_cell_mass * mags_cell**2
                else:
                    gcell = frame.cell_integrals(mags_q**2, weighted=True)
                den = frame.h * np.sqrt(frame.patch_sums(gcell))
                samples["PP_weighted_approx"].append(_ratio_stats(num, den))

        for kind in kinds:
            if kind == "PP_Lp":
                by_tag = {}
                for tag, m, md in samples[kind]:
                    by_tag.setdefault(tag, []).append((m, md))
                for tag in sorted(by_tag):
                    pairs = np.array(by_tag[tag])
                    rows.append(
                        RatioRow(
                            level, frame.h_max, tag,
                            float(np.nanmax(pairs[:, 0])),
                            float(np.nanmedian(pairs[:, 1])),
                        )
                    )
            else:
                pairs = np.array(samples[kind])
                rows.append(
                    RatioRow(
                        level, frame.h_max, kind,
                        float(np.nanmax(pairs[:, 0])),
                        float(np.nanmedian(pairs[:, 1])),
                    )
                )
    return rows


def quasi_best_report(
    mesh0, weight, nf, v, grad_v, n_levels=4, quad_degree=6, fd_delta=1e-6
):
    """Per-element local approximation ratios of the simplex-assigned
    interpolant in the natural distance:

        avg_T omega |V(grad v) - V(grad Pi_h v)|^2
        -------------------------------------------
        h_T^2 avg_{S_T} omega |D[V(grad v)]|^2

    D[V(grad v)] is the spatial Jacobian of the composed field, computed by
    central differences with per-coordinate step fd_delta (1 + |x_j|).
    Level-stable max ratios are the numerical signature of the first-order
    local approximation property.
    """

    def v_field(points):
        return nfunc.vector_V(nf, grad_v(points))

    rows = []
    mesh = mesh0
    for level in range(n_levels):
        if level > 0:
            mesh = refine_uniform(mesh)
        frame = _LevelFrame(mesh, weight, quad_degree)
        sz = SzOperator(mesh)
        sz_v = sz.interpolate(v)
        vq = v_field(frame.space.q_x)
        vh = nfunc.vector_V(nf, sz_v.cell_gradients(frame.space))[frame.space.q_cell]
        num_cell = frame.cell_integrals(np.sum((vq - vh) ** 2, axis=-1), weighted=True)
        num_avg = num_cell / frame.areas
        # numerators at roundoff level relative to the field magnitude witness
        # exact reproduction (P1 data); count them as zero instead of 0/0
        scale = float(np.max(np.sum(vq**2, axis=-1), initial=0.0))
        num_avg[num_avg <= 1e-26 * max(scale, 1e-300)] = 0.0

        jac_sq = np.zeros(len(frame.space.q_x))
        for j in range(2):
            step = fd_delta * (1.0 + np.abs(frame.space.q_x[:, j]))
            xp = frame.space.q_x.copy()
            xm = frame.space.q_x.copy()
            xp[:, j] += step
            xm[:, j] -= step
            dcol = (v_field(xp) - v_field(xm)) / (2.0 * step[:, None])
            jac_sq += np.sum(dcol**2, axis=-1)
        den_cell = frame.cell_integrals(jac_sq, weighted=True)
        den_avg = frame.patch_sums(den_cell) / frame.patch_area
        mx, md = _ratio_stats(num_avg, frame.h**2 * den_avg, zero_over_zero="zero")
        rows.append(RatioRow(level, frame.h_max, "QB", mx, md))
    return rows
