"""Post-processed nonconforming displacement and its affine projection.

The nonconforming displacement ``u*`` has one 2-vector dof per edge, its
edge average.  It is never reconstructed pointwise; only its dofs and
the elementwise affine projection ``Pi_nabla`` are computed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .element import LOAD_DEGREE, ElementBatch, rm_values
from .mesh import CellGeometry, Mesh
from .quadrature import gauss_legendre

# boundary edge averages of g use an 8-point Gauss rule
EDGE_AVERAGE_DEGREE = 15


@dataclass(frozen=True, eq=False)
class NonconformingDisplacement:
    mesh: Mesh
    averages: np.ndarray    # (n_edges, 2)

    def __post_init__(self):
        if self.averages.shape != (self.mesh.n_edges, 2):
            raise ValueError("need one 2-vector average per mesh edge")


@dataclass(frozen=True, eq=False)
class P1DisplacementField:
    """Per cell ``v(x) = const + grad (x - x_E)``."""
    centroid: np.ndarray    # (N_E, 2)
    const: np.ndarray       # (N_E, 2)
    grad: np.ndarray        # (N_E, 2, 2), grad[c, i, j] = d v_i / d x_j

    def __len__(self):
        return len(self.const)

    def evaluate(self, cells, points) -> np.ndarray:
        """Values at ``points (..., 2)`` in ``cells`` (broadcast against points[..., 0])."""
        cells = np.asarray(cells)
        z = np.asarray(points, dtype=float) - self.centroid[cells]
        return self.const[cells] + np.einsum("...ij,...j->...i", self.grad[cells], z)


def multiplier_edge_average(lam) -> np.ndarray:
    """Edge average of multipliers ``(c, a0, a1)`` in the global edge frame,
    as ``(c, a0)`` frame components; the odd ``a1`` mode has zero mean."""
    lam = np.asarray(lam, dtype=float)
    return lam[..., :2].copy()


def project_edge_constant(p0, p1, w: Callable | None = None, *, multiplier=None,
                          degree: int = EDGE_AVERAGE_DEGREE) -> np.ndarray:
    """``(1/|e|) int_e w ds`` on the segment ``p0 -> p1``.

    Either a vector field ``w`` (Gauss quadrature) or multiplier
    coefficients ``(c, a0, a1)`` in the frame of ``p0 -> p1`` (closed form).
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if multiplier is not None:
        d = p1 - p0
        t = d / np.linalg.norm(d, axis=-1, keepdims=True)
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        c, a0 = multiplier_edge_average(multiplier).T
        return c[..., None] * t + a0[..., None] * n
    xi, wts = gauss_legendre(degree)
    mid = 0.5 * (p0 + p1)
    half = 0.5 * (p1 - p0)
    pts = mid[..., None, :] + xi[:, None] * half[..., None, :]
    vals = np.asarray(w(pts), dtype=float)
    return 0.5 * np.einsum("q,...qc->...c", wts, vals)


def build_ustar(mesh: Mesh, lam, g: Callable) -> NonconformingDisplacement:
    """Edge averages of ``u*``: the multiplier mean on interior edges and the
    mean of ``g`` on boundary edges."""
    lam = np.asarray(lam, dtype=float).reshape(-1, 3)
    ie, be = mesh.interior_edges, mesh.boundary_edges
    if len(lam) != len(ie):
        raise ValueError(f"expected {len(ie)} interior multipliers, got {len(lam)}")
    avg = np.zeros((mesh.n_edges, 2))
    c, a0 = multiplier_edge_average(lam).T
    avg[ie] = c[:, None] * mesh.edge_tangent[ie] + a0[:, None] * mesh.edge_normal[ie]
    if len(be):
        ev = mesh.edges[be]
        avg[be] = project_edge_constant(mesh.vertices[ev[:, 0]], mesh.vertices[ev[:, 1]], g)
    return NonconformingDisplacement(mesh, avg)


def pi_nabla_cell(coords, averages) -> tuple[np.ndarray, np.ndarray]:
    """Affine projection from edge averages on one polygon (or a batch).

    Returns ``(const, grad)`` with the field written about the centroid.
    """
    geo = CellGeometry(coords)
    avg = np.asarray(averages, dtype=float)
    L = geo.edge_length
    perim = L.sum(axis=-1)
    if np.any(perim <= 0) or np.any(geo.area <= 0):
        raise ValueError("degenerate cell")
    grad = np.einsum("...k,...ki,...kj->...ij", L, avg, geo.normal) / geo.area[..., None, None]
    zsum = np.einsum("...k,...kj->...j", L, geo.midpoint - geo.centroid[..., None, :])
    bsum = np.einsum("...k,...ki->...i", L, avg)
    const = (bsum - np.einsum("...ij,...j->...i", grad, zsum)) / perim[..., None]
    return const, grad


def pi_nabla(ustar: NonconformingDisplacement) -> P1DisplacementField:
    mesh = ustar.mesh
    const = np.zeros((mesh.n_cells, 2))
    grad = np.zeros((mesh.n_cells, 2, 2))
    for grp in mesh.groups:
        c, G = pi_nabla_cell(grp.coords, ustar.averages[grp.edge_ids])
        const[grp.cell_ids] = c
        grad[grp.cell_ids] = G
    return P1DisplacementField(mesh.centroid.copy(), const, grad)


def project_rigid(coords, u: Callable, degree: int = LOAD_DEGREE) -> np.ndarray:
    """L2 projection of ``u`` onto rigid motions of a polygon (batched)."""
    kernel = ElementBatch(coords, np.eye(3), 1.0)
    return np.linalg.solve(kernel.rm_mass, kernel.load(u, degree)[..., None])[..., 0]


def project_rigid_mesh(mesh: Mesh, u: Callable, degree: int = LOAD_DEGREE) -> np.ndarray:
    out = np.zeros((mesh.n_cells, 3))
    for grp in mesh.groups:
        kernel = ElementBatch(grp.coords, np.eye(3), 1.0, grp.triangles)
        out[grp.cell_ids] = np.linalg.solve(kernel.rm_mass, kernel.load(u, degree)[..., None])[..., 0]
    return out


def rm_field(coeffs, points, centroid) -> np.ndarray:
    """Evaluate rigid motions ``coeffs (..., 3)`` at ``points (..., np, 2)``."""
    return np.einsum("...j,...pjc->...pc", coeffs, rm_values(points, centroid))


def write_ustar_csv(field: P1DisplacementField, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "c1", "c2", "g11", "g12", "g21", "g22"])
        for i in range(len(field)):
            w.writerow([i, *(f"{v:.17g}" for v in field.const[i]),
                        *(f"{v:.17g}" for v in field.grad[i].ravel())])
