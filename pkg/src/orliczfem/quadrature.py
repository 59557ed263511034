"""Quadrature rules on the reference triangle, the unit segment and the unit disk.

Triangle rules come from a Gauss-Jacobi x Gauss-Legendre product on the
collapsed unit square, which is exact to the requested polynomial degree with
positive weights at any order.  Disk rules pair a radial Gauss-Legendre rule
(with the polar Jacobian folded into the weights) with a periodic trapezoid
rule in the angle, so constants integrate exactly and odd angular harmonics
cancel to machine precision.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = ["TriangleRule", "triangle_rule", "segment_rule", "disk_rule"]


class TriangleRule:
    """Points (n, 2) in the reference triangle {x,y >= 0, x+y <= 1} and
    weights (n,) summing to 1/2.  ``degree`` is the guaranteed exactness."""

    def __init__(self, points, weights, degree):
        self.points = points
        self.weights = weights
        self.degree = degree

    def __len__(self):
        return self.weights.size


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Symmetric-free product rule exact for polynomials up to ``degree``."""
    n = max(1, (int(degree) + 2) // 2)
    # u-direction carries the (1-u) Jacobi weight of the Duffy map
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    u = 0.5 * (xj + 1.0)
    wu = 0.25 * wj
    v = 0.5 * (xl + 1.0)
    wv = 0.5 * wl
    U, V = np.meshgrid(u, v, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = (WU * WV).ravel()
    return TriangleRule(np.column_stack([x, y]), w, 2 * n - 1)


@lru_cache(maxsize=None)
def segment_rule(n):
    """Gauss-Legendre points/weights on [0, 1]."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def disk_rule(nr, na):
    """Polar rule on the unit disk: points (nr*na, 2), weights summing to pi."""
    xr, wr = roots_legendre(nr)
    r = 0.5 * (xr + 1.0)
    wr = 0.5 * wr * r  # polar Jacobian
    theta = 2.0 * np.pi * np.arange(na) / na
    wt = np.full(na, 2.0 * np.pi / na)
    R, T = np.meshgrid(r, theta, indexing="ij")
    WR, WT = np.meshgrid(wr, wt, indexing="ij")
    pts = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
    return pts, (WR * WT).ravel()


def subdivided_reference(levels):
    """Corner triples of the reference triangle red-refined ``levels`` times."""
    tris = [np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])]
    for _ in range(levels):
        new = []
        for t in tris:
            m01 = 0.5 * (t[0] + t[1])
            m12 = 0.5 * (t[1] + t[2])
            m02 = 0.5 * (t[0] + t[2])
            new.extend(
                [
                    np.array([t[0], m01, m02]),
                    np.array([m01, t[1], m12]),
                    np.array([m02, m12, t[2]]),
                    np.array([m01, m12, m02]),
                ]
            )
        tris = new
    return tris
