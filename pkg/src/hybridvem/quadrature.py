"""Gauss rules on segments, triangles and (sub-triangulated) polygons."""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_EDGE_DEGREE = 15
MAX_TRIANGLE_DEGREE = 20


class QuadratureError(ValueError):
    pass


@lru_cache(maxsize=None)
def gauss_legendre(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights on [-1, 1], exact for polynomials up to ``degree``."""
    if degree < 0 or degree > MAX_EDGE_DEGREE:
        raise QuadratureError(f"unsupported edge quadrature degree {degree}")
    npts = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(npts)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed (conical product) rule on the reference triangle.

    Returns barycentric-free reference coordinates ``(npts, 2)`` on
    {x, y >= 0, x + y <= 1} and weights summing to 1/2.
    """
    if degree < 0 or degree > MAX_TRIANGLE_DEGREE:
        raise QuadratureError(f"unsupported triangle quadrature degree {degree}")
    npts = max(1, (degree + 2) // 2)
    # the collapse x = u, y = (1 - u) v adds a factor (1 - u) absorbed by Gauss-Jacobi
    s, ws = roots_jacobi(npts, 1.0, 0.0)
    u = 0.5 * (1.0 + s)
    wu = 0.25 * ws
    g, wg = np.polynomial.legendre.leggauss(npts)
    v = 0.5 * (1.0 + g)
    wv = 0.5 * wg
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([uu.ravel(), ((1.0 - uu) * vv).ravel()])
    wts = np.outer(wu, wv).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def quadrature_on_segment(a, b, degree: int):
    """Physical points and weights on the segment from ``a`` to ``b``.

    ``a`` and ``b`` may carry leading batch dimensions ``(..., 2)``; the
    result has shape ``(..., npts, 2)`` and ``(..., npts)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    xi, w = gauss_legendre(degree)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[..., None, :] + xi[:, None] * half[..., None, :]
    length = np.linalg.norm(b - a, axis=-1)
    return pts, w * (0.5 * length)[..., None]


def quadrature_on_triangles(tri, degree: int):
    """Points and weights on triangles ``tri`` of shape ``(..., 3, 2)``.

    Weights carry the signed area, so clockwise triangles integrate with a
    negative sign and degenerate (zero-area) triangles contribute nothing.
    """
    tri = np.asarray(tri, dtype=float)
    ref, w = triangle_rule(degree)
    a = tri[..., 0, :]
    e1 = tri[..., 1, :] - a
    e2 = tri[..., 2, :] - a
    pts = (a[..., None, :] + ref[:, 0, None] * e1[..., None, :]
           + ref[:, 1, None] * e2[..., None, :])
    jac = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    return pts, w * jac[..., None]
