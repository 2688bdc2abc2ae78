"""Element-level kernels of the lowest-order mixed virtual element for elasticity.

Stress degrees of freedom live on the cell edges.  On local edge ``k``
(from vertex ``k`` to ``k + 1``, tangent ``t``, outward normal ``n``,
length ``L``) the traction of a discrete stress is

    tau n = c t + (a0 + a1 xi) n,    xi = 2 (s - s_mid) / L in [-1, 1],

and the local dof vector is ``[c_0, a0_0, a1_0, c_1, ...]`` (length
``3 nv``).  Displacements are rigid motions ``alpha + beta (x - x_E)^perp``
with coefficient vector ``(alpha_1, alpha_2, beta)``, where
``(c1, c2)^perp = (c2, -c1)``.

Every kernel accepts vertex arrays with arbitrary leading batch
dimensions, ``(..., nv, 2)``, so the same code handles one polygon or a
stack of polygons with equal vertex count.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .material import INNER_WEIGHT, LameParameters, compliance_matrix, kappa_E, to_tensor
from .mesh import CellGeometry, _group_triangles, sub_triangulate
from .quadrature import gauss_legendre, quadrature_on_triangles

# traces are linear and rigid motions linear on edges: products are quadratic
_EDGE_DEGREE = 3
LOAD_DEGREE = 6
BOUNDARY_DEGREE = 15


def rm_values(points, centroid) -> np.ndarray:
    """Rigid-motion basis at ``points (..., P, 2)``: shape ``(..., P, 3, 2)``."""
    points = np.asarray(points, dtype=float)
    z = points - np.asarray(centroid)[..., None, :]
    r = np.zeros(points.shape[:-1] + (3, 2))
    r[..., 0, 0] = 1.0
    r[..., 1, 1] = 1.0
    r[..., 2, 0] = z[..., 1]
    r[..., 2, 1] = -z[..., 0]
    return r


def rm_evaluate(coeffs, points, centroid) -> np.ndarray:
    """Evaluate rigid motions ``coeffs (..., 3)`` at ``points (..., P, 2)``."""
    return np.einsum("...j,...pjc->...pc", coeffs, rm_values(points, centroid))


def edge_trace_basis(xi, geo: CellGeometry) -> np.ndarray:
    """Values of ``t, n, xi n`` at abscissae ``xi``: ``(..., nv, nq, 3, 2)``."""
    xi = np.asarray(xi, dtype=float)
    t = np.broadcast_to(geo.tangent[..., :, None, :], geo.tangent.shape[:-1] + (len(xi), 2))
    n = np.broadcast_to(geo.normal[..., :, None, :], t.shape)
    return np.stack([t, n, xi[:, None] * n], axis=-2)


def _triangles_for(coords):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 2:
        tris = sub_triangulate(coords)
        if len(tris) < len(coords):  # pad ear-clipped output to nv triangles
            tris = np.concatenate([tris, np.zeros((len(coords) - len(tris), 3, 2))])
        return tris
    flat = coords.reshape(-1, *coords.shape[-2:])
    return _group_triangles(flat).reshape(coords.shape[:-2] + (coords.shape[-2], 3, 2))


class ElementBatch:
    """Local VEM matrices for polygons ``coords (..., nv, 2)``.

    ``compliance`` is the 3x3 compliance matrix per cell ``(..., 3, 3)``
    and ``kappa`` the stabilisation constant per cell.
    """

    def __init__(self, coords, compliance, kappa, triangles=None):
        self.geo = geo = CellGeometry(coords)
        self.nv = geo.nv
        self.ndof = 3 * geo.nv
        self.batch_shape = geo.area.shape
        self.compliance = np.broadcast_to(compliance, self.batch_shape + (3, 3))
        self.kappa = np.broadcast_to(kappa, self.batch_shape)
        self.triangles = _triangles_for(coords) if triangles is None else triangles

        xi, w = gauss_legendre(_EDGE_DEGREE)
        self.edge_xi = xi
        self.edge_points = geo.edge_points(xi)
        self.edge_weights = w * (0.5 * geo.edge_length)[..., None]
        self.traces = edge_trace_basis(xi, geo)

    @classmethod
    def from_params(cls, coords, params: LameParameters):
        return cls(coords, compliance_matrix(params.lam, params.mu), kappa_E(params))

    def cell_quadrature(self, degree: int):
        pts, wts = quadrature_on_triangles(self.triangles, degree)
        lead = self.batch_shape
        return pts.reshape(lead + (-1, 2)), wts.reshape(lead + (-1,))

    @cached_property
    def rm_mass(self) -> np.ndarray:
        """Mass matrix of the rigid-motion basis, ``(..., 3, 3)``."""
        pts, wts = self.cell_quadrature(2)
        r = rm_values(pts, self.geo.centroid)
        return np.einsum("...p,...pic,...pjc->...ij", wts, r, r)

    @cached_property
    def boundary_moments(self) -> np.ndarray:
        """``m[j, i] = int_dE (tau_i n) . r_j``, shape ``(..., 3, 3 nv)``."""
        r = rm_values(self.edge_points.reshape(self.batch_shape + (-1, 2)), self.geo.centroid)
        r = r.reshape(self.edge_points.shape[:-1] + (3, 2))
        m = np.einsum("...kq,...kqac,...kqjc->...jka", self.edge_weights, self.traces, r)
        return m.reshape(self.batch_shape + (3, self.ndof))

    @cached_property
    def div_matrix(self) -> np.ndarray:
        """Dofs to rigid-motion coefficients of ``div tau``, ``(..., 3, 3 nv)``."""
        return np.linalg.solve(self.rm_mass, self.boundary_moments)

    @cached_property
    def projection_matrix(self) -> np.ndarray:
        """Dofs to the constant tensor ``Pi_E tau`` (3-vector), ``(..., 3, 3 nv)``.

        Tested against the constant tensors ``e_j``, written as
        ``C eps(p_j)`` with ``p_j(x) = (D e_j)(x - x_E)``.
        """
        geo = self.geo
        strains = to_tensor(np.swapaxes(self.compliance, -1, -2))  # (..., j, 2, 2)
        pts, wts = self.cell_quadrature(2)
        z = pts - geo.centroid[..., None, :]
        p_cell = np.einsum("...jcd,...pd->...pjc", strains, z)
        r = rm_values(pts, geo.centroid)
        rp = np.einsum("...p,...pkc,...pjc->...kj", wts, r, p_cell)
        vol = -np.einsum("...kj,...ki->...ji", rp, self.div_matrix)

        ze = self.edge_points - geo.centroid[..., None, None, :]
        p_edge = np.einsum("...jcd,...kqd->...kqjc", strains, ze)
        bnd = np.einsum("...kq,...kqac,...kqjc->...jka", self.edge_weights, self.traces, p_edge)
        rhs = vol + bnd.reshape(vol.shape)
        lhs = geo.area[..., None, None] * (INNER_WEIGHT @ self.compliance)
        return np.linalg.solve(lhs, rhs)

    @cached_property
    def consistency(self) -> np.ndarray:
        P = self.projection_matrix
        wd = INNER_WEIGHT @ self.compliance
        return self.geo.area[..., None, None] * np.einsum("...ai,...ab,...bj->...ij", P, wd, P)

    @cached_property
    def projection_residual(self) -> np.ndarray:
        """``((I - Pi_E) tau_i) n`` at the edge Gauss points, ``(..., nv, nq, 2, 3 nv)``."""
        nv, nq = self.nv, len(self.edge_xi)
        full = np.zeros(self.batch_shape + (nv, nq, 2, nv, 3))
        for k in range(nv):
            full[..., k, :, :, k, :] = np.swapaxes(self.traces[..., k, :, :, :], -1, -2)
        full = full.reshape(self.batch_shape + (nv, nq, 2, self.ndof))
        T = to_tensor(np.swapaxes(self.projection_matrix, -1, -2))  # (..., i, 2, 2)
        tn = np.einsum("...icd,...kd->...kci", T, self.geo.normal)
        return full - tn[..., :, None, :, :]

    @cached_property
    def stabilization(self) -> np.ndarray:
        R = self.projection_residual
        scale = (self.kappa * self.geo.diameter)[..., None, None]
        return scale * np.einsum("...kq,...kqci,...kqcj->...ij", self.edge_weights, R, R)

    @property
    def A(self) -> np.ndarray:
        """Stabilised stress matrix ``(..., 3 nv, 3 nv)``."""
        return self.consistency + self.stabilization

    @property
    def B(self) -> np.ndarray:
        """``B[i, j] = int_E div tau_i . r_j``, shape ``(..., 3 nv, 3)``."""
        return np.swapaxes(self.boundary_moments, -1, -2)

    def load(self, f, degree: int = LOAD_DEGREE) -> np.ndarray:
        """``int_E f . r_j`` for a vector field ``f(points) -> (..., 2)``."""
        pts, wts = self.cell_quadrature(degree)
        fv = np.asarray(f(pts), dtype=float)
        return np.einsum("...p,...pc,...pjc->...j", wts, fv, rm_values(pts, self.geo.centroid))

    def edge_trace_mass(self) -> np.ndarray:
        """``int_e phi_a . phi_b`` per local edge, ``(..., nv, 3, 3)``."""
        return np.einsum("...kq,...kqac,...kqbc->...kab", self.edge_weights, self.traces, self.traces)


# -- single-cell operations --------------------------------------------------

def rm_mass_matrix(coords) -> np.ndarray:
    return ElementBatch(coords, np.eye(3), 1.0).rm_mass


def div_projection(coords, dofs) -> np.ndarray:
    """Rigid-motion coefficients of ``div tau`` for stress dofs ``dofs``."""
    return ElementBatch(coords, np.eye(3), 1.0).div_matrix @ np.asarray(dofs, dtype=float)


def pi_E_projection(coords, params: LameParameters, dofs) -> np.ndarray:
    """Constant tensor (3-vector) ``Pi_E tau``."""
    return ElementBatch.from_params(coords, params).projection_matrix @ np.asarray(dofs, dtype=float)


def local_a_h(coords, params: LameParameters) -> np.ndarray:
    return ElementBatch.from_params(coords, params).A


def local_b(coords, dofs, v) -> float:
    el = ElementBatch(coords, np.eye(3), 1.0)
    d = el.div_matrix @ np.asarray(dofs, dtype=float)
    return float(d @ el.rm_mass @ np.asarray(v, dtype=float))


def local_load(coords, f, degree: int = LOAD_DEGREE) -> np.ndarray:
    return ElementBatch(coords, np.eye(3), 1.0).load(f, degree)


def boundary_term(p0, p1, g, degree: int = BOUNDARY_DEGREE) -> np.ndarray:
    """``int_e g . (t, n, xi n)`` on the edge ``p0 -> p1`` (normal on its right)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    xi, w = gauss_legendre(degree)
    L = np.linalg.norm(p1 - p0)
    t = (p1 - p0) / L
    n = np.array([t[1], -t[0]])
    pts = 0.5 * (p0 + p1) + np.outer(xi, 0.5 * (p1 - p0))
    gv = np.asarray(g(pts), dtype=float)
    wl = 0.5 * L * w
    return np.array([wl @ (gv @ t), wl @ (gv @ n), wl @ (xi * (gv @ n))])


def constant_stress_dofs(coords, sigma0) -> np.ndarray:
    """Exact dofs of the constant stress ``sigma0`` (2x2) on a polygon."""
    geo = CellGeometry(coords)
    tn = np.einsum("cd,...kd->...kc", np.asarray(sigma0, dtype=float), geo.normal)
    c = np.einsum("...kc,...kc->...k", tn, geo.tangent)
    a0 = np.einsum("...kc,...kc->...k", tn, geo.normal)
    return np.stack([c, a0, np.zeros_like(c)], axis=-1).reshape(geo.area.shape + (-1,))


def interpolate_stress(coords, tau, degree: int = BOUNDARY_DEGREE) -> np.ndarray:
    """Edge-moment interpolant of a smooth stress field.

    ``tau(points (..., 2)) -> (..., 2, 2)``.  On each edge the trace is
    matched against the restrictions of ``e_1``, ``e_2`` and
    ``(x - x_E)^perp``.
    """
    geo = CellGeometry(coords)
    xi, w = gauss_legendre(degree)
    pts = geo.edge_points(xi)                               # (..., nv, nq, 2)
    wts = w * (0.5 * geo.edge_length)[..., None]
    phi = edge_trace_basis(xi, geo)                         # (..., nv, nq, 3, 2)
    test = rm_values(pts.reshape(geo.area.shape + (-1, 2)), geo.centroid)
    test = test.reshape(pts.shape[:-1] + (3, 2))
    tn = np.einsum("...kqcd,...kd->...kqc", np.asarray(tau(pts), dtype=float), geo.normal)
    mom = np.einsum("...kq,...kqac,...kqjc->...kja", wts, phi, test)
    rhs = np.einsum("...kq,...kqc,...kqjc->...kj", wts, tn, test)
    dofs = np.linalg.solve(mom, rhs[..., None])[..., 0]
    return dofs.reshape(geo.area.shape + (-1,))
