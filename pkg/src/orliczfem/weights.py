"""Weights and Muckenhoupt-type diagnostics.

A Weight is a nonnegative function on R^2 evaluated vectorized.  The
diagnostics estimate the A_p characteristic over a seeded ball sampler,
decide the generalized condition tied to an N-function (both directly and
through the growth index), run the complementary integrability check, and
verify the boundary-collar variant used by obstacle studies.

Ball averages near a power-law singularity are computed with a radial rule
centered at the singular point: the angle subtended inside the ball is known
in closed form, so the average reduces to a 1d integral that can be graded
geometrically toward the singularity.  The growth flags compare a shallow and
a deep grading (6 vs 26 decades, on a floor-lowered clone of the weight); a
ratio above 1.5 marks a sup that diverges under refinement.
"""

import math

import numpy as np
from scipy.special import roots_legendre

from . import nfunc
from .quadrature import triangle_rule

__all__ = [
    "Weight",
    "Ball",
    "BallSampler",
    "ApDiagnostics",
    "APhiDiagnostics",
    "BPhiResult",
    "ApOmegaResult",
    "ap_characteristic",
    "is_A_Phi",
    "check_B_Phi",
    "is_A_p_Omega",
    "measure",
]

GROWTH_RATIO = 1.5
BASE_DECADES = 6
DEEP_DECADES = 26


class Weight:
    """Nonnegative weight on R^2.

    Kinds: ``constant``, ``radial_power`` (|x - center|^alpha with a floor
    |x - center| >= floor, default 1e-14), ``product`` of weights, and
    ``custom`` wrapping a vectorized callable.
    """

    def __init__(self, kind, value=1.0, center=None, alpha=0.0, factors=None, func=None,
                 floor=1e-14):
        self.kind = kind
        self.value = value
        self.center = None if center is None else np.asarray(center, dtype=float)
        self.alpha = alpha
        self.factors = factors
        self.func = func
        self.floor = floor

    @classmethod
    def constant(cls, value=1.0):
        if value <= 0:
            raise ValueError("constant weight must be positive")
        return cls("constant", value=value)

    @classmethod
    def radial_power(cls, alpha, center=(0.0, 0.0), floor=1e-14):
        return cls("radial_power", center=center, alpha=alpha, floor=floor)

    @classmethod
    def product(cls, factors):
        return cls("product", factors=list(factors))

    @classmethod
    def custom(cls, func, label="custom"):
        w = cls("custom", func=func)
        w.value = label
        return w

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        pts = x[None, :] if scalar else x
        if self.kind == "constant":
            out = np.full(pts.shape[:-1], float(self.value))
        elif self.kind == "radial_power":
            r = np.sqrt(np.sum((pts - self.center) ** 2, axis=-1))
            r = np.maximum(r, self.floor)
            out = r**self.alpha
        elif self.kind == "product":
            out = np.ones(pts.shape[:-1])
            for f in self.factors:
                out = out * f(pts)
        else:
            out = np.asarray(self.func(pts), dtype=float)
        return float(out[0]) if scalar else out

    def singular_points(self):
        """Centers where the weight degenerates or blows up (alpha != 0)."""
        if self.kind == "radial_power" and self.alpha != 0.0:
            return [np.array(self.center)]
        if self.kind == "product":
            pts = []
            for f in self.factors:
                pts.extend(f.singular_points())
            return pts
        return []

    def is_singular(self):
        """True when some radial-power factor has negative exponent."""
        if self.kind == "radial_power":
            return self.alpha < 0.0
        if self.kind == "product":
            return any(f.is_singular() for f in self.factors)
        return False

    def with_floor(self, floor):
        if self.kind == "radial_power":
            return Weight.radial_power(self.alpha, self.center, floor=floor)
        if self.kind == "product":
            return Weight.product([f.with_floor(floor) for f in self.factors])
        return self

    def pow(self, q):
        """The weight omega^q (exact for the built-in kinds)."""
        if self.kind == "constant":
            return Weight.constant(float(self.value) ** q)
        if self.kind == "radial_power":
            return Weight.radial_power(self.alpha * q, self.center, floor=self.floor)
        if self.kind == "product":
            return Weight.product([f.pow(q) for f in self.factors])
        return Weight.custom(lambda x, s=self, q=q: s(x) ** q, label=f"custom^{q:g}")

    def cache_key(self):
        if self.kind == "constant":
            return ("constant", float(self.value))
        if self.kind == "radial_power":
            return ("radial_power", float(self.alpha), tuple(self.center), self.floor)
        if self.kind == "product":
            return ("product",) + tuple(f.cache_key() for f in self.factors)
        return ("custom", id(self))

    def describe(self):
        if self.kind == "constant":
            return f"constant({self.value:g})"
        if self.kind == "radial_power":
            c = tuple(float(v) for v in self.center)
            return f"|x-{c}|^{self.alpha:g}"
        if self.kind == "product":
            return " * ".join(f.describe() for f in self.factors)
        return f"custom({self.value})"

    def __repr__(self):
        return f"Weight({self.describe()})"


class Ball:
    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def __repr__(self):
        return f"Ball(center={tuple(self.center)}, radius={self.radius:g})"


class BallSampler:
    """Seeded collection of balls intersecting the domain box.

    ``n_balls`` centers are drawn uniformly in the box with radii cycling
    through a log-spaced grid between 1e-3*diam and diam; for each singular
    point of the weight under study a ladder of balls centered there is added,
    since those attain the characteristic for power-law weights.
    """

    def __init__(self, box, n_balls=500, seed=0, singular_points=(), n_singular_radii=16):
        x0, y0, x1, y1 = box
        self.box = tuple(float(v) for v in box)
        diam = math.hypot(x1 - x0, y1 - y0)
        self.diam = diam
        rng = np.random.default_rng(seed)
        self.seed = seed
        centers = np.column_stack(
            [rng.uniform(x0, x1, n_balls), rng.uniform(y0, y1, n_balls)]
        )
        radii = np.geomspace(1e-3 * diam, diam, 32)[np.arange(n_balls) % 32]
        self.balls = [Ball(c, r) for c, r in zip(centers, radii)]
        for s in singular_points:
            for r in np.geomspace(1e-3 * diam, diam, n_singular_radii):
                self.balls.append(Ball(s, r))
        self.n_uniform = n_balls

    def __len__(self):
        return len(self.balls)


def _plain_ball_rule(ball, nr, na):
    xr, wr = roots_legendre(nr)
    r = ball.radius * 0.5 * (xr + 1.0)
    wr = ball.radius * 0.5 * wr * r
    th = 2.0 * np.pi * np.arange(na) / na
    wth = 2.0 * np.pi / na
    pts = ball.center + np.stack(
        [np.outer(r, np.cos(th)), np.outer(r, np.sin(th))], axis=-1
    )
    w = np.broadcast_to(wr[:, None] * wth, (nr, na))
    return pts.reshape(-1, 2), w.ravel().copy()


def _graded_ball_nodes(ball, spoint, decades, nr_panel=8, na=32):
    """Polar nodes for int_B f around the singular point ``spoint``.

    Polar coordinates centered at the singularity.  The full-circle inner
    region (present when the singularity lies inside the ball) gets a radial
    ladder log-graded over ``decades`` decades; the outer band, where only an
    arc of each circle lies inside the ball, is parametrized by the angle u
    on the ball's own circle via r(u)^2 = (R-D)^2 + 4RD sin^2(u/2), which
    unfolds the square-root cusps of the arc half-angle at r = R -+ D.
    Returns (r, theta, w) flat arrays with sum(w) ~ area(B); the caller must
    evaluate the integrand from (r, theta) directly, since for deep gradings
    the Cartesian point s + r e_theta is absorbed to s in float64.
    """
    c = ball.center
    R = ball.radius
    s = np.asarray(spoint, dtype=float)
    D = float(np.linalg.norm(c - s))
    base_angle = math.atan2(c[1] - s[1], c[0] - s[0]) if D > 0 else 0.0
    xg, wg = roots_legendre(nr_panel)
    xa, wa = roots_legendre(na)
    r_parts, th_parts, w_parts = [], [], []

    def emit(r, psi, wr):
        # wr already includes the radial measure; arc nodes theta = base +- psi x
        theta = base_angle + psi[:, None] * xa[None, :]
        w = (wr * psi)[:, None] * wa[None, :]
        rr = np.broadcast_to(r[:, None], theta.shape)
        r_parts.append(rr.ravel().copy())
        th_parts.append(theta.ravel())
        w_parts.append(w.ravel())

    if D < R:
        # inner full-circle region [r_bot, R - D], graded toward the singularity
        r_in_top = R - D
        breaks = np.geomspace(r_in_top * 10.0 ** (-decades), r_in_top, 2 * decades + 1)
        for a, b in zip(breaks[:-1], breaks[1:]):
            r = 0.5 * (a + b) + 0.5 * (b - a) * xg
            wr = 0.5 * (b - a) * wg * r
            emit(r, np.full(nr_panel, np.pi), wr)
    if D > 1e-14 * R:
        # outer band r in [|R - D|, R + D]: r dr = RD sin(u) du
        u_breaks = np.linspace(0.0, np.pi, 25)
        for a, b in zip(u_breaks[:-1], u_breaks[1:]):
            u = 0.5 * (a + b) + 0.5 * (b - a) * xg
            wu = 0.5 * (b - a) * wg
            r = np.sqrt((R - D) ** 2 + 4.0 * R * D * np.sin(0.5 * u) ** 2)
            cospsi = np.clip((D - R * np.cos(u)) / np.maximum(r, 1e-300), -1.0, 1.0)
            emit(r, np.arccos(cospsi), wu * R * D * np.sin(u))
    return np.concatenate(r_parts), np.concatenate(th_parts), np.concatenate(w_parts)


def _eval_polar(weight, spoint, r, theta):
    """Evaluate the weight at s + r e_theta with the radius kept exact.

    Factors that are radial powers centered at ``spoint`` are computed from r
    directly; everything else is smooth near s and is evaluated at the
    (possibly absorbed) Cartesian points.
    """
    if weight.kind == "radial_power" and np.array_equal(weight.center, spoint):
        return np.maximum(r, weight.floor) ** weight.alpha
    if weight.kind == "product":
        out = np.ones_like(r)
        for f in weight.factors:
            out = out * _eval_polar(f, spoint, r, theta)
        return out
    pts = spoint + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    return weight(pts)


def _nearest_singular(ball, singular_points):
    near = None
    best = math.inf
    for s in singular_points:
        d = float(np.linalg.norm(ball.center - s))
        if d <= 3.0 * ball.radius and d < best:
            near, best = np.asarray(s, dtype=float), d
    return near


def _ball_values(weight, ball, singular_points, refined):
    """(weight values, quadrature weights, ball area) for one ball."""
    near = _nearest_singular(ball, singular_points)
    area = math.pi * ball.radius**2
    if near is None:
        nr, na = (64, 128) if refined else (32, 64)
        pts, wts = _plain_ball_rule(ball, nr, na)
        return weight(pts), wts, area
    decades = DEEP_DECADES if refined else BASE_DECADES
    nr_panel, na = (12, 48) if refined else (8, 32)
    r, theta, wts = _graded_ball_nodes(ball, near, decades, nr_panel, na)
    return _eval_polar(weight, near, r, theta), wts, area


def _averages(weight, sampler, refined, ball_subset=None):
    """Ball-wise quadrature data keyed by ball index."""
    sing = weight.singular_points()
    w_eval = weight.with_floor(1e-300) if refined else weight
    out = {}
    idx = range(len(sampler.balls)) if ball_subset is None else ball_subset
    for i in idx:
        vals, wts, area = _ball_values(w_eval, sampler.balls[i], sing, refined)
        out[i] = (vals, wts, area)
    return out, w_eval


class ApDiagnostics:
    """Sampled A_p characteristic with its refinement growth flag."""

    def __init__(self, p, characteristic, refined_characteristic, growth_flag, sampler):
        self.p = p
        self.characteristic = characteristic
        self.refined_characteristic = refined_characteristic
        self.growth_flag = growth_flag
        self.n_balls = len(sampler)
        self.seed = sampler.seed

    def as_dict(self):
        return {
            "p": self.p,
            "characteristic": self.characteristic,
            "refined_characteristic": self.refined_characteristic,
            "growth_flag": bool(self.growth_flag),
            "n_balls": self.n_balls,
            "seed": self.seed,
        }

    def __repr__(self):
        return (
            f"ApDiagnostics(p={self.p:g}, characteristic={self.characteristic:.6g}, "
            f"growth_flag={self.growth_flag})"
        )


def _ap_products(weight, p, sampler, refined, subset=None):
    sigma = weight.pow(-1.0 / (p - 1.0))
    w_data, _ = _averages(weight, sampler, refined, subset)
    s_data, _ = _averages(sigma, sampler, refined, subset)
    prods = {}
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for i, (wv, wts, area) in w_data.items():
            sv = s_data[i][0]
            aw = np.float64(np.dot(wv, wts)) / area
            asig = np.float64(np.dot(sv, wts)) / area
            prods[i] = float(aw * np.power(asig, p - 1.0))
    return prods


def _refinement_subset(sampler, base_products):
    """Balls re-evaluated at deep grading: every singular-centered ball, every
    near-singular uniform ball, and the top contributors of the base pass."""
    n = len(sampler.balls)
    subset = set(range(sampler.n_uniform, n))
    finite = {i: v for i, v in base_products.items() if math.isfinite(v)}
    if finite:
        top = max(finite.values())
        subset.update(i for i, v in finite.items() if v >= 0.3 * top)
    subset.update(i for i, v in base_products.items() if not math.isfinite(v))
    return sorted(subset)


def ap_characteristic(weight, p, sampler):
    """Estimate sup over sampled balls of (avg omega)(avg omega^(-1/(p-1)))^(p-1).

    The growth flag is raised when deepening the singular grading inflates the
    sup by more than the 1.5 ratio (or produces non-finite values), which is
    the numerical signature of a weight outside A_p.
    """
    if not p > 1.0:
        raise nfunc.DomainError(f"A_p needs p > 1, got {p}")
    base = _ap_products(weight, p, sampler, refined=False)
    base_sup = max(base.values())
    subset = _refinement_subset(sampler, base)
    deep = _ap_products(weight, p, sampler, refined=True, subset=subset)
    refined_sup = max(deep.values())
    for i, v in base.items():
        if i not in deep and v > refined_sup:
            refined_sup = v
    bad = (
        not math.isfinite(base_sup)
        or not math.isfinite(refined_sup)
        or refined_sup > GROWTH_RATIO * base_sup
    )
    return ApDiagnostics(p, base_sup, refined_sup, bad, sampler)


class APhiDiagnostics:
    """Two-route verdict for the N-function weight class."""

    def __init__(self, verdict, inconsistent, direct_score, direct_refined,
                 direct_growth, indirect, i_estimate):
        self.verdict = verdict
        self.inconsistent = inconsistent
        self.direct_score = direct_score
        self.direct_refined = direct_refined
        self.direct_growth = direct_growth
        self.indirect = indirect
        self.i_estimate = i_estimate

    def as_dict(self):
        return {
            "verdict": bool(self.verdict),
            "inconsistent": bool(self.inconsistent),
            "direct_score": self.direct_score,
            "direct_refined": self.direct_refined,
            "direct_growth": bool(self.direct_growth),
            "indirect": self.indirect.as_dict(),
            "i_estimate": self.i_estimate,
        }

    def __repr__(self):
        return (
            f"APhiDiagnostics(verdict={self.verdict}, direct={self.direct_score:.4g}, "
            f"indirect_p={self.i_estimate:.3f}, inconsistent={self.inconsistent})"
        )


DELTA_GRID = np.geomspace(1e-6, 1e6, 13)


def _inverse_dphi_fast(phi):
    """(Phi')^{-1} as a vectorized callable: exact for the power family,
    table-backed log-log interpolation of the bisection inverse otherwise
    (diagnostic-grade accuracy, ~1e-5 relative)."""
    if phi.family[0] == "power":
        p = phi.family[1]
        return lambda t: np.power(t, 1.0 / (p - 1.0))
    inv = nfunc._inverse_dphi(phi)
    tgrid = np.geomspace(1e-120, 1e120, 4000)
    sgrid = inv(tgrid)
    logt = np.log(tgrid)
    logs = np.log(np.maximum(sgrid, 1e-300))

    def fast(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t > 0
        with np.errstate(over="ignore"):
            out[pos] = np.exp(np.interp(np.log(t[pos]), logt, logs))
        return out

    return fast


def _direct_scores(weight, phi, inv, sampler, refined, subset=None):
    data, _ = _averages(weight, sampler, refined, subset)
    scores = {}
    deltas = DELTA_GRID
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for i, (wv, wts, area) in data.items():
            aw = float(np.dot(wv, wts)) / area
            args = 1.0 / (deltas[:, None] * wv[None, :])
            avg_inv = (inv(args) @ wts) / area
            vals = deltas * aw * phi.dphi(avg_inv)
            vals = vals[np.isfinite(vals)]
            scores[i] = float(vals.max()) if vals.size else math.inf
    return scores


def is_A_Phi(weight, phi, sampler):
    """Decide the weight class tied to Phi by two independent routes.

    Direct route: sup over balls and a 13-point log grid of scaling factors
    delta of (avg delta*omega) * Phi'(avg (Phi')^{-1}(1/(delta*omega))),
    growth-checked like the characteristic.  Indirect route: the A_p verdict
    at p equal to the estimated lower growth index of Phi.  Disagreement sets
    ``inconsistent`` (and the verdict stays conservative: both must pass).
    """
    if not math.isfinite(nfunc.estimate_delta2(phi)):
        raise nfunc.DivergenceError("Phi must satisfy the doubling condition")
    if not math.isfinite(nfunc.estimate_delta2(nfunc.conjugate(phi))):
        raise nfunc.DivergenceError("Phi* must satisfy the doubling condition")
    inv = _inverse_dphi_fast(phi)
    base = _direct_scores(weight, phi, inv, sampler, refined=False)
    base_sup = max(base.values())
    subset = _refinement_subset(sampler, base)
    deep = _direct_scores(weight, phi, inv, sampler, refined=True, subset=subset)
    refined_sup = max(deep.values())
    for i, v in base.items():
        if i not in deep and v > refined_sup:
            refined_sup = v
    direct_growth = (
        not math.isfinite(base_sup)
        or not math.isfinite(refined_sup)
        or refined_sup > GROWTH_RATIO * base_sup
    )
    est = nfunc.estimate_indices(phi)
    p_eff = max(est.i_lower, 1.05)
    indirect = ap_characteristic(weight, p_eff, sampler)
    direct_ok = not direct_growth
    indirect_ok = not indirect.growth_flag
    return APhiDiagnostics(
        verdict=direct_ok and indirect_ok,
        inconsistent=direct_ok != indirect_ok,
        direct_score=base_sup,
        direct_refined=refined_sup,
        direct_growth=direct_growth,
        indirect=indirect,
        i_estimate=p_eff,
    )


class BPhiResult:
    """Outcome of the complementary integrability check on one ball."""

    def __init__(self, finite, min_value, mu_at_min, values):
        self.finite = finite
        self.min_value = min_value
        self.mu_at_min = mu_at_min
        self.values = values

    def as_dict(self):
        return {
            "finite": bool(self.finite),
            "min_value": self.min_value,
            "mu_at_min": self.mu_at_min,
        }

    def __repr__(self):
        return f"BPhiResult(finite={self.finite}, min={self.min_value:.4g})"


MU_GRID = np.geomspace(1e-6, 1e6, 13)


def check_B_Phi(weight, phi, ball):
    """Search mu for a finite (1/mu) int_B Phi*(mu/omega) omega dx.

    Evaluated over a 13-point log grid of mu; each mu is integrated at the
    shallow and the deep singular grading, and counts as finite only when the
    value neither overflows nor keeps growing between the two depths (a
    finite quadrature value of a divergent integral grows without bound as
    the grading deepens).  Reports the minimal stable value and whether any
    mu passes.
    """
    conj = nfunc.conjugate(phi, numeric=(phi.family[0] != "power"))
    sing = weight.singular_points()
    w_deep = weight.with_floor(1e-300)

    def totals(refined):
        wv, wts, _area = _ball_values(w_deep, ball, sing, refined)
        out = {}
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for mu in MU_GRID:
                integrand = conj.phi(mu / wv) * wv
                t = float(np.dot(integrand, wts)) / mu
                out[float(mu)] = t if math.isfinite(t) else math.inf
        return out

    shallow = totals(refined=False)
    deep = totals(refined=True)
    vals = {}
    for mu in shallow:
        stable = (
            math.isfinite(deep[mu])
            and math.isfinite(shallow[mu])
            and deep[mu] <= GROWTH_RATIO * max(shallow[mu], 1e-300)
        )
        vals[mu] = deep[mu] if stable else math.inf
    finite_mu = {m: v for m, v in vals.items() if math.isfinite(v)}
    if finite_mu:
        mu_best = min(finite_mu, key=finite_mu.get)
        return BPhiResult(True, finite_mu[mu_best], mu_best, vals)
    return BPhiResult(False, math.inf, math.nan, vals)


class ApOmegaResult:
    """Boundary-collar verdict: A_p plus positivity/continuity on the collar."""

    def __init__(self, verdict, ap, omega_l, modulus_coarse, modulus_fine, eps):
        self.verdict = verdict
        self.ap = ap
        self.omega_l = omega_l
        self.modulus_coarse = modulus_coarse
        self.modulus_fine = modulus_fine
        self.eps = eps

    def as_dict(self):
        return {
            "verdict": bool(self.verdict),
            "ap": self.ap.as_dict(),
            "omega_l": self.omega_l,
            "modulus_coarse": self.modulus_coarse,
            "modulus_fine": self.modulus_fine,
            "eps": self.eps,
        }

    def __repr__(self):
        return f"ApOmegaResult(verdict={self.verdict}, omega_l={self.omega_l:.4g})"


def _collar_points(mesh, eps, spacing, offset):
    from matplotlib.path import Path

    from .mesh import boundary_loops

    x0, y0 = mesh.vertices.min(axis=0)
    x1, y1 = mesh.vertices.max(axis=0)
    xs = np.arange(x0 + offset[0], x1, spacing)
    ys = np.arange(y0 + offset[1], y1, spacing)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = np.zeros(len(pts), dtype=bool)
    for loop in boundary_loops(mesh):
        path = Path(mesh.vertices[loop])
        inside |= path.contains_points(pts)
    pts = pts[inside]
    a = mesh.vertices[mesh.boundary_faces[:, 0]]
    b = mesh.vertices[mesh.boundary_faces[:, 1]]
    ab = b - a
    denom = np.sum(ab * ab, axis=1)
    d = np.full(len(pts), np.inf)
    for k in range(len(a)):
        t = np.clip(((pts - a[k]) @ ab[k]) / denom[k], 0.0, 1.0)
        proj = a[k] + t[:, None] * ab[k]
        d = np.minimum(d, np.linalg.norm(pts - proj, axis=1))
    return pts[d < eps]


def _collar_stat(weight, mesh, eps, spacing, rng, n_grids=4):
    """Median over jittered grids of (collar inf, grid-scale modulus).

    Jittering removes the dependence on whether a zero of the weight lands
    exactly on a grid node (where a floored evaluation would repeat at every
    resolution and hide the collapse)."""
    infs, mods = [], []
    for _ in range(n_grids):
        pts = _collar_points(mesh, eps, spacing, rng.uniform(0.0, spacing, 2))
        vals = weight(pts)
        order = np.lexsort((pts[:, 0], pts[:, 1]))
        pts_s, vals_s = pts[order], vals[order]
        d = np.linalg.norm(np.diff(pts_s, axis=0), axis=1)
        dv = np.abs(np.diff(vals_s))
        near = d < 1.5 * spacing
        infs.append(float(vals.min()))
        mods.append(float(dv[near].max()) if np.any(near) else 0.0)
    return float(np.median(infs)), float(np.median(mods))


def is_A_p_Omega(weight, mesh, p, eps):
    """A_p membership plus positivity and continuity on the boundary collar.

    The collar {x in domain : dist(x, boundary) < eps} is sampled on three
    grid resolutions (eps/4, eps/8, eps/16), each as a median over seeded
    jittered grids.  The verdict requires the A_p growth flag to be off, the
    collar inf not to decay across the two octaves (a weight vanishing
    somewhere on the boundary loses at least 2^(-2a) per two octaves for a
    Hoelder-a zero), and the grid-scale continuity modulus to shrink.  Choose
    eps small enough that the weight varies mildly across one collar width,
    or the decay test loses resolution.
    """
    x0, y0 = mesh.vertices.min(axis=0)
    x1, y1 = mesh.vertices.max(axis=0)
    sampler = BallSampler(
        (x0, y0, x1, y1), seed=0, singular_points=weight.singular_points()
    )
    ap = ap_characteristic(weight, p, sampler)
    rng = np.random.default_rng(20240811)
    stats = [_collar_stat(weight, mesh, eps, eps / k, rng) for k in (4, 8, 16)]
    inf_coarse, mod_coarse = stats[0]
    inf_fine, mod_fine = stats[2]
    positive_stable = inf_fine > 0.0 and inf_fine > 0.6 * inf_coarse
    continuous = mod_fine <= 0.9 * mod_coarse + 1e-12
    verdict = (not ap.growth_flag) and positive_stable and continuous
    return ApOmegaResult(verdict, ap, inf_fine, mod_coarse, mod_fine, eps)


def _duffy_singular_triangle(weight, s, pa, pb, decades=30, nr_panel=6, na=12):
    """int over triangle (s, pa, pb) of a weight blowing up at the vertex s.

    Duffy map x = s + u (pa + v (pb - pa) - s) with Jacobian 2*area*u; the
    u-ladder is log-graded toward the singular vertex and the weight is
    evaluated in polar form so the radius u*|P(v) - s| stays exact."""
    s = np.asarray(s, dtype=float)
    ea, eb = pa - s, pb - s
    area2 = abs(ea[0] * eb[1] - ea[1] * eb[0])
    if area2 < 1e-300:
        return 0.0
    xg, wg = roots_legendre(nr_panel)
    xv, wv = roots_legendre(na)
    v = 0.5 * (xv + 1.0)
    wvv = 0.5 * wv
    P = pa[None, :] + v[:, None] * (pb - pa)[None, :]
    rho = np.linalg.norm(P - s, axis=1)
    theta = np.arctan2(P[:, 1] - s[1], P[:, 0] - s[0])
    breaks = np.geomspace(10.0 ** (-decades), 1.0, 2 * decades + 1)
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        u = 0.5 * (a + b) + 0.5 * (b - a) * xg
        wu = 0.5 * (b - a) * wg
        r = u[:, None] * rho[None, :]
        th = np.broadcast_to(theta[None, :], r.shape)
        vals = _eval_polar(weight, s, r, th)
        total += float(np.einsum("i,j,ij->", wu * u, wvv, vals))
    return area2 * total


def measure(weight, mesh, region=None, degree=6):
    """Weighted area sum over the mesh cells, optionally restricted to cells
    whose centroid satisfies ``region``.  Cells touching a singular point of
    a blowing-up weight are integrated with a graded Duffy rule; splitting
    the cell at the singular point against each of its edges covers vertex,
    edge, and interior positions uniformly (degenerate pieces vanish)."""
    rule = triangle_rule(degree)
    cells = mesh.cells
    if region is not None:
        centroids = mesh.vertices[cells].mean(axis=1)
        cells = cells[np.asarray(region(centroids), dtype=bool)]
    v0 = mesh.vertices[cells[:, 0]]
    e1 = mesh.vertices[cells[:, 1]] - v0
    e2 = mesh.vertices[cells[:, 2]] - v0
    area2 = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    sing = weight.singular_points() if weight.is_singular() else []
    sub_mask = np.zeros(len(cells), dtype=bool)
    sing_of = {}
    for s in sing:
        b = mesh_barycentric(v0, e1, e2, np.asarray(s, dtype=float))
        hit = np.all(b >= -1e-12, axis=-1)
        for idx in np.flatnonzero(hit):
            sing_of[idx] = np.asarray(s, dtype=float)
        sub_mask |= hit
    total = 0.0
    plain = ~sub_mask
    if np.any(plain):
        pts = (
            v0[plain, None, :]
            + rule.points[None, :, 0:1] * e1[plain, None, :]
            + rule.points[None, :, 1:2] * e2[plain, None, :]
        )
        vals = weight(pts)
        total += float(np.sum(area2[plain, None] * rule.weights[None, :] * vals))
    for idx, s in sing_of.items():
        corners = mesh.vertices[cells[idx]]
        for k in range(3):
            pa, pb = corners[k], corners[(k + 1) % 3]
            total += _duffy_singular_triangle(weight, s, pa, pb)
    return total


def mesh_barycentric(v0, e1, e2, x):
    """Barycentric coordinates of point x in the triangles (v0, v0+e1, v0+e2)."""
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    dx = x[None, :] - v0
    l1 = (dx[:, 0] * e2[:, 1] - dx[:, 1] * e2[:, 0]) / det
    l2 = (e1[:, 0] * dx[:, 1] - e1[:, 1] * dx[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


