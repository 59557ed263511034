"""N-function calculus.

An N-function is a convex function ``Phi: [0, inf) -> [0, inf)`` with
``Phi(0) = 0`` whose right derivative ``Phi'`` is nondecreasing, vanishes at 0
and tends to infinity.  This module provides the built-in power families, the
Young conjugate, shifted functions, growth-index and doubling estimates, and
the monotone vector fields A and V induced by Phi together with the Jacobian
of A used in Newton linearizations.

All callables are vectorized: they accept scalars or numpy arrays of any shape
and return matching shapes (scalars in, floats out).
"""

import math

import numpy as np
from scipy import integrate

__all__ = [
    "NFunction",
    "IndexEstimate",
    "DomainError",
    "DivergenceError",
    "make_power",
    "make_shifted_power",
    "make_custom",
    "conjugate",
    "shift",
    "psi_of",
    "estimate_indices",
    "estimate_delta2",
    "vector_A",
    "vector_V",
    "linearized_A",
]

DEFAULT_T_GRID = (1e-8, 1e8, 200)


class DomainError(ValueError):
    """Raised for parameters outside the admissible range (p <= 1, kappa < 0, a < 0)."""


class DivergenceError(ArithmeticError):
    """Raised when a quantity that must be finite diverges under refinement."""


def _asfloat(t):
    a = np.asarray(t, dtype=float)
    return a, (a.ndim == 0)


def _ret(a, scalar):
    return float(a) if scalar else a


class NFunction:
    """Differentiable N-function with first and second derivative data.

    Parameters
    ----------
    phi, dphi, ddphi : callable
        Vectorized maps t >= 0 -> Phi(t), Phi'(t) and (for t > 0) Phi''(t).
    family : tuple
        Structural tag, e.g. ``("power", p)``, ``("shifted_power", p, kappa)``,
        ``("conjugate", base_family)`` or ``("custom",)``.  Used for analytic
        fast paths; never required for correctness.
    label : str
        Human-readable name used in reports.
    """

    def __init__(self, phi, dphi, ddphi, family=("custom",), label="custom"):
        self._phi = phi
        self._dphi = dphi
        self._ddphi = ddphi
        self.family = family
        self.label = label
        self._characteristics = None

    def __call__(self, t):
        return self.phi(t)

    def phi(self, t):
        a, s = _asfloat(t)
        return _ret(self._phi(a), s)

    def dphi(self, t):
        a, s = _asfloat(t)
        return _ret(self._dphi(a), s)

    def ddphi(self, t):
        a, s = _asfloat(t)
        return _ret(self._ddphi(a), s)

    @property
    def characteristics(self):
        """(min, max) of Phi'(t) / (t Phi''(t)) over the default grid.

        Finite positive bounds witness the balanced-growth assumption that the
        whole toolkit relies on; stored lazily on first access.
        """
        if self._characteristics is None:
            t = np.logspace(
                math.log10(DEFAULT_T_GRID[0]), math.log10(DEFAULT_T_GRID[1]), DEFAULT_T_GRID[2]
            )
            with np.errstate(over="ignore", invalid="ignore"):
                r = self._dphi(t) / (t * self._ddphi(t))
            r = r[np.isfinite(r)]
            self._characteristics = (float(r.min()), float(r.max()))
        return self._characteristics

    def __repr__(self):
        return f"NFunction({self.label})"


def make_power(p):
    """Power N-function t^p / p with derivative t^(p-1).  Requires p > 1."""
    if not p > 1.0:
        raise DomainError(f"power family needs p > 1, got {p}")
    p = float(p)

    def phi(t):
        return np.power(t, p) / p

    def dphi(t):
        return np.power(t, p - 1.0)

    def ddphi(t):
        with np.errstate(divide="ignore"):
            return (p - 1.0) * np.power(t, p - 2.0)

    return NFunction(phi, dphi, ddphi, family=("power", p), label=f"power(p={p:g})")


def _shifted_power_phi(p, kappa, t):
    # Antiderivative of (kappa+s)^(p-2) s from 0 to t.  The closed form
    # ((k+t)^p - k^p)/p - k((k+t)^(p-1) - k^(p-1))/(p-1) cancels catastrophically
    # for t << kappa, so a binomial series in u = t/kappa takes over there.
    t = np.asarray(t, dtype=float)
    if kappa == 0.0:
        return np.power(t, p) / p
    out = np.empty_like(t)
    u = t / kappa
    small = u < 0.5
    if np.any(small):
        us = u[small]
        # integral_0^u (1+s)^(p-2) s ds = sum_k binom(p-2, k) u^(k+2)/(k+2)
        acc = np.zeros_like(us)
        coeff = 1.0
        upow = us * us
        for k in range(64):
            term = coeff * upow / (k + 2.0)
            acc += term
            coeff *= (p - 2.0 - k) / (k + 1.0)
            upow = upow * us
            if abs(coeff) * 0.5 ** (k + 3) < 1e-19:
                break
        out[small] = kappa**p * acc
    if np.any(~small):
        tb = t[~small]
        a = (np.power(kappa + tb, p) - kappa**p) / p
        b = kappa * (np.power(kappa + tb, p - 1.0) - kappa ** (p - 1.0)) / (p - 1.0)
        out[~small] = a - b
    return out


def make_shifted_power(p, kappa):
    """Degenerate/singular family with derivative (kappa + t)^(p-2) t.

    Requires p > 1 and kappa >= 0.  kappa = 0 coincides with ``make_power(p)``.
    """
    if not p > 1.0:
        raise DomainError(f"shifted power family needs p > 1, got {p}")
    if kappa < 0.0:
        raise DomainError(f"shifted power family needs kappa >= 0, got {kappa}")
    p = float(p)
    kappa = float(kappa)

    def phi(t):
        return _shifted_power_phi(p, kappa, t)

    def dphi(t):
        return np.power(kappa + t, p - 2.0) * t

    def ddphi(t):
        # d/dt [(kappa+t)^(p-2) t] = (kappa+t)^(p-3) ((p-1) t + kappa)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.power(kappa + t, p - 3.0) * ((p - 1.0) * t + kappa)

    return NFunction(
        phi,
        dphi,
        ddphi,
        family=("shifted_power", p, kappa),
        label=f"shifted_power(p={p:g}, kappa={kappa:g})",
    )


def make_custom(phi, dphi, ddphi, label="custom"):
    """Wrap user-supplied vectorized callables as an NFunction."""
    return NFunction(phi, dphi, ddphi, family=("custom",), label=label)


def _inverse_dphi(nf):
    """Vectorized generalized inverse t -> sup{s : Phi'(s) <= t} by bisection."""

    def inv(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t > 0.0
        if not np.any(pos):
            return out
        tv = t[pos]
        hi = np.ones_like(tv)
        # grow until Phi'(hi) > t; Phi' -> inf guarantees termination
        for _ in range(200):
            mask = nf._dphi(hi) <= tv
            if not np.any(mask):
                break
            hi[mask] *= 2.0
        lo = np.zeros_like(tv)
        grown = hi > 1.0
        lo[grown] = hi[grown] / 2.0  # bracket [hi/2, hi] known from the doubling
        for _ in range(110):
            mid = 0.5 * (lo + hi)
            below = nf._dphi(mid) <= tv
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out[pos] = 0.5 * (lo + hi)
        return out

    return inv


def conjugate(nf, numeric=False):
    """Young conjugate Phi*(t) = sup_s (s t - Phi(s)).

    The power family has the closed form conjugate power(p') with
    1/p + 1/p' = 1 and is returned analytically unless ``numeric=True``.
    The generic route inverts Phi' by monotone bisection and evaluates
    Phi*(t) = t s - Phi(s) at s = (Phi')^{-1}(t); the second derivative comes
    from the inverse function rule (Phi*)''(t) = 1 / Phi''((Phi')^{-1}(t)).
    """
    fam = nf.family
    if not numeric and fam[0] == "power":
        p = fam[1]
        return make_power(p / (p - 1.0))
    inv = _inverse_dphi(nf)

    def phi(t):
        s = inv(t)
        return t * s - nf._phi(s)

    def ddphi(t):
        s = inv(t)
        with np.errstate(divide="ignore"):
            return 1.0 / nf._ddphi(s)

    return NFunction(
        phi, inv, ddphi, family=("conjugate", fam), label=f"conjugate({nf.label})"
    )


def _quad_integral(dphi_like, t):
    """Integral of a vectorized nonneg integrand from 0 to each entry of t."""
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    vals = np.empty_like(flat)
    for i, ti in enumerate(flat):
        if ti <= 0.0:
            vals[i] = 0.0
        else:
            vals[i], _ = integrate.quad(
                lambda s: float(dphi_like(np.asarray(s))), 0.0, ti,
                epsabs=0.0, epsrel=1e-10, limit=200,
            )
    return vals.reshape(t.shape)


def shift(nf, a):
    """Shifted N-function Phi_a with Phi_a'(t) = Phi'(a + t) t / (a + t).

    a = 0 returns the input unchanged.  Shifting the built-in power families
    stays inside the shifted-power family (exact identity): the shift of
    power(p) by a is shifted_power(p, a), and the shift of
    shifted_power(p, kappa) by a is shifted_power(p, kappa + a).
    """
    if a < 0.0:
        raise DomainError(f"shift needs a >= 0, got {a}")
    if a == 0.0:
        return nf
    a = float(a)
    fam = nf.family
    if fam[0] == "power":
        return make_shifted_power(fam[1], a)
    if fam[0] == "shifted_power":
        return make_shifted_power(fam[1], fam[2] + a)

    def dphi(t):
        return nf._dphi(a + t) * t / (a + t)

    def ddphi(t):
        return nf._ddphi(a + t) * t / (a + t) + nf._dphi(a + t) * a / (a + t) ** 2

    def phi(t):
        return _quad_integral(dphi, t)

    return NFunction(
        phi, dphi, ddphi, family=("shifted", fam, a), label=f"shift({nf.label}, a={a:g})"
    )


def psi_of(nf):
    """The N-function Psi with Psi'(t) = sqrt(t Phi'(t)); V is its gradient field."""

    def dpsi(t):
        return np.sqrt(t * nf._dphi(t))

    def ddpsi(t):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (nf._dphi(t) + t * nf._ddphi(t)) / (2.0 * np.sqrt(t * nf._dphi(t)))

    def psi(t):
        return _quad_integral(dpsi, t)

    return NFunction(psi, dpsi, ddpsi, family=("psi", nf.family), label=f"psi({nf.label})")


class IndexEstimate:
    """Growth indices estimated from h(lambda) = sup_t Phi(lambda t)/Phi(t).

    Attributes: ``i_lower`` (limit lambda -> 0), ``I_upper`` (lambda -> inf),
    the lambda and t grids used, and a ``diverged`` flag for non-doubling input.
    """

    def __init__(self, i_lower, I_upper, lambdas_lower, lambdas_upper, t_range, diverged=False):
        self.i_lower = i_lower
        self.I_upper = I_upper
        self.lambdas_lower = lambdas_lower
        self.lambdas_upper = lambdas_upper
        self.t_range = t_range
        self.diverged = diverged

    def __repr__(self):
        return (
            f"IndexEstimate(i={self.i_lower:.4f}, I={self.I_upper:.4f}, "
            f"diverged={self.diverged})"
        )


def _sup_ratio(nf, lam, tgrid):
    with np.errstate(over="ignore", invalid="ignore"):
        r = nf._phi(lam * tgrid) / nf._phi(tgrid)
    r = r[np.isfinite(r)]
    if r.size == 0:
        return math.inf
    return float(r.max())


def estimate_indices(nf, t_range=(1e-8, 1e8), t_points=200):
    """Estimate the lower and upper growth indices of Phi.

    h(lambda) = sup_t Phi(lambda t)/Phi(t) is sampled over a log-spaced t grid;
    the indices are least-squares slopes of log h against log lambda over
    lambda in {1e-3, 1e-4, 1e-5} (lower) and {1e3, 1e4, 1e5} (upper).
    Raises DivergenceError if the doubling estimate diverges (non-doubling Phi).
    """
    d2 = estimate_delta2(nf, t_range=t_range, t_points=t_points)
    diverged = not math.isfinite(d2)
    tgrid = np.logspace(math.log10(t_range[0]), math.log10(t_range[1]), t_points)
    lam_lo = np.array([1e-3, 1e-4, 1e-5])
    lam_hi = np.array([1e3, 1e4, 1e5])
    h_lo = np.array([_sup_ratio(nf, lam, tgrid) for lam in lam_lo])
    h_hi = np.array([_sup_ratio(nf, lam, tgrid) for lam in lam_hi])
    i_lower = float(np.polyfit(np.log(lam_lo), np.log(h_lo), 1)[0])
    I_upper = float(np.polyfit(np.log(lam_hi), np.log(h_hi), 1)[0])
    return IndexEstimate(i_lower, I_upper, lam_lo, lam_hi, t_range, diverged=diverged)


def _doubling_profile(nf, tgrid):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        r = nf._phi(2.0 * tgrid) / nf._phi(tgrid)
    keep = np.isfinite(r) & (r > 0.0)
    return r[keep]


def estimate_delta2(nf, t_range=(1e-8, 1e8), t_points=200):
    """Estimate the doubling constant sup_t Phi(2t)/Phi(t).

    Returns math.inf when the sup keeps growing as the grid is extended or the
    ratio profile is still climbing at the top of the evaluable range, i.e.
    when Phi fails the doubling condition.
    """
    tgrid = np.logspace(math.log10(t_range[0]), math.log10(t_range[1]), t_points)
    prof = _doubling_profile(nf, tgrid)
    if prof.size < t_points // 4:
        return math.inf
    base = float(prof.max())
    # a sup that is still growing at the largest evaluable t means divergence
    # even when overflow caps both grids at the same effective top
    ntop = max(2, prof.size // 20)
    mid_hi = max(ntop + 1, int(0.8 * prof.size))
    mid_lo = max(0, int(0.7 * prof.size))
    r_top = float(prof[-ntop:].max())
    r_mid = float(prof[mid_lo:mid_hi].max())
    wide = np.logspace(math.log10(t_range[0]) - 2.0, math.log10(t_range[1]) + 2.0, t_points + 50)
    ext = float(max(_doubling_profile(nf, wide).max(), base))
    if not math.isfinite(ext) or ext > 1.02 * base or r_top > 10.0 * r_mid:
        return math.inf
    return ext


def _norm_last(z):
    return np.sqrt(np.sum(z * z, axis=-1))


def vector_A(nf, z):
    """Flux field A(z) = Phi'(|z|) z / |z|, with A(0) = 0.

    z has shape (..., d); the result matches.
    """
    z = np.asarray(z, dtype=float)
    r = _norm_last(z)
    fac = np.zeros_like(r)
    pos = r > 0.0
    fac[pos] = nf._dphi(r[pos]) / r[pos]
    return fac[..., None] * z


def vector_V(nf, z):
    """Quasi-norm field V(z) = sqrt(Phi'(|z|)/|z|) z, with V(0) = 0.

    Equivalently Psi'(|z|) z/|z| for Psi' = sqrt(t Phi'(t)).
    """
    z = np.asarray(z, dtype=float)
    r = _norm_last(z)
    fac = np.zeros_like(r)
    pos = r > 0.0
    fac[pos] = np.sqrt(nf._dphi(r[pos]) / r[pos])
    return fac[..., None] * z


def linearized_A(nf, z, eps_reg=1e-10):
    """Jacobian DA(z) = Phi''(|z|) P + (Phi'(|z|)/|z|)(I - P), P = z z^T/|z|^2.

    At z = 0 the limit of Phi'(t)/t times the identity is returned; when that
    limit is 0 or infinite it is regularized to ``eps_reg`` times the identity.
    z has shape (..., d); the result has shape (..., d, d).
    """
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    r = _norm_last(z)
    out = np.zeros(z.shape + (d,), dtype=float)
    eye = np.eye(d)
    pos = r > 0.0
    if np.any(pos):
        zp = z[pos]
        rp = r[pos]
        unit = zp / rp[..., None]
        proj = unit[..., :, None] * unit[..., None, :]
        dd = nf._ddphi(rp)
        q = nf._dphi(rp) / rp
        out[pos] = dd[..., None, None] * proj + q[..., None, None] * (eye - proj)
    if np.any(~pos):
        # probe the limit of Phi'(t)/t at two scales; unstable or nonfinite
        # values mean the limit is 0 or inf and the floor applies
        q1 = float(nf.dphi(1e-12)) / 1e-12
        q2 = float(nf.dphi(1e-6)) / 1e-6
        if math.isfinite(q1) and math.isfinite(q2) and q2 > 0.0 and 0.5 <= q1 / q2 <= 2.0:
            c = max(q1, eps_reg)
        else:
            c = eps_reg
        out[~pos] = c * eye
    return out
