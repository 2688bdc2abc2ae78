"""Manufactured solutions, discrete error norms and convergence tables."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .element import ElementBatch, rm_values
from .hybrid import (Solution, assemble_broken, back_substitute,
                     relative_difference, solve_conforming, solve_multipliers, static_condense)
from .material import INNER_WEIGHT, LameParameters, MaterialField, compliance_matrix, to_tensor
from .mesh import Mesh, generate_family
from .postprocess import P1DisplacementField, build_ustar, pi_nabla, project_rigid_mesh
from .quadrature import gauss_legendre

log = logging.getLogger(__name__)

ERROR_DEGREE = 10
EDGE_ERROR_DEGREE = 15      # 8-point Gauss
ERROR_NAMES = ("e_u", "e_div", "e_proj", "E_sigma", "e_rm", "e_p0", "E0", "E1", "e_mult")

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ManufacturedSolution:
    """Exact fields evaluated at points ``(..., 2)``.

    ``sigma`` returns 3-vectors ``(s11, s22, s12)`` and ``grad_u`` the
    2x2 displacement gradient ``d u_i / d x_j``.
    """
    name: str
    params: LameParameters
    u: Field
    grad_u: Field
    sigma: Field
    div_sigma: Field

    def f(self, x) -> np.ndarray:
        return -self.div_sigma(x)

    def g(self, x) -> np.ndarray:
        return self.u(x)


def testcase_2d(lam: float = 1e5, mu: float = 0.5) -> ManufacturedSolution:
    """Divergence-free trigonometric displacement vanishing on the unit square boundary."""
    params = LameParameters(lam, mu)
    tp = 2.0 * np.pi

    def u(x):
        a, b = tp * x[..., 0], tp * x[..., 1]
        return np.stack([0.25 * np.sin(a) ** 2 * np.sin(2 * b),
                         -0.25 * np.sin(b) ** 2 * np.sin(2 * a)], axis=-1)

    def grad_u(x):
        a, b = tp * x[..., 0], tp * x[..., 1]
        s = 0.5 * np.pi * np.sin(2 * a) * np.sin(2 * b)
        g12 = np.pi * np.sin(a) ** 2 * np.cos(2 * b)
        g21 = -np.pi * np.sin(b) ** 2 * np.cos(2 * a)
        return np.stack([np.stack([s, g12], -1), np.stack([g21, -s], -1)], -2)

    def sigma(x):
        # div u = 0, so sigma = 2 mu eps(u)
        g = grad_u(x)
        return 2.0 * mu * np.stack([g[..., 0, 0], g[..., 1, 1],
                                    0.5 * (g[..., 0, 1] + g[..., 1, 0])], axis=-1)

    def div_sigma(x):
        a, b = tp * x[..., 0], tp * x[..., 1]
        k = 2.0 * mu * np.pi ** 2
        return np.stack([k * np.sin(2 * b) * (2 * np.cos(2 * a) - 1),
                         k * np.sin(2 * a) * (1 - 2 * np.cos(2 * b))], axis=-1)

    return ManufacturedSolution("tc2d", params, u, grad_u, sigma, div_sigma)


def patch_test_case(sigma0, lam: float = 1.0, mu: float = 1.0) -> ManufacturedSolution:
    """Constant stress ``sigma0`` (2x2 or 3-vector) with ``u = (D sigma0) x``."""
    params = LameParameters(lam, mu)
    s0 = np.asarray(sigma0, dtype=float)
    if s0.shape == (2, 2):
        if not np.allclose(s0, s0.T):
            raise ValueError("constant stress must be symmetric")
        s0 = np.array([s0[0, 0], s0[1, 1], s0[0, 1]])
    eps = to_tensor(compliance_matrix(lam, mu) @ s0)

    def u(x):
        return np.einsum("ij,...j->...i", eps, x)

    def grad_u(x):
        return np.broadcast_to(eps, x.shape[:-1] + (2, 2)).copy()

    def sigma(x):
        return np.broadcast_to(s0, x.shape[:-1] + (3,)).copy()

    def div_sigma(x):
        return np.zeros(x.shape)

    return ManufacturedSolution("patch", params, u, grad_u, sigma, div_sigma)


# -- errors ------------------------------------------------------------------

@dataclass
class ErrorReport:
    e_u: float
    e_div: float
    e_proj: float
    E_sigma: float
    e_rm: float
    e_p0: float
    E0: float
    E1: float
    e_mult: float

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ERROR_NAMES}


def _rel(err2: float, ref2: float) -> float:
    """Relative error from squared sums; absolute when the reference vanishes."""
    err = np.sqrt(max(err2, 0.0))
    ref = np.sqrt(max(ref2, 0.0))
    return float(err / ref) if ref > 1e-14 else float(err)


def edge_traces(solution: Solution) -> np.ndarray:
    """Traction dofs ``(c, a0, a1)`` per mesh edge in the global edge frame,
    taken from the edge's left cell."""
    mesh = solution.mesh
    out = np.zeros((mesh.n_edges, 3))
    for g in mesh.groups:
        loc = solution.cell_stress(g).reshape(len(g.cell_ids), g.nv, 3)
        out[g.edge_ids[g.owner]] = loc[g.owner]
    return out


def compute_errors(mesh: Mesh, solution: Solution, pstar: P1DisplacementField,
                   exact: ManufacturedSolution, material: MaterialField | None = None) -> ErrorReport:
    if solution.mesh is not mesh and solution.u.shape[0] != mesh.n_cells:
        raise ValueError("solution does not belong to this mesh")
    if len(pstar) != mesh.n_cells:
        raise ValueError("post-processed field does not match the mesh")
    if material is None:
        material = MaterialField.uniform(exact.params, mesh.n_cells)
    acc = dict.fromkeys(("u", "du", "div", "ref_div", "proj", "ref_sigma",
                         "rm", "p0", "E0", "E1", "ref_grad"), 0.0)
    ubar = project_rigid_mesh(mesh, exact.u)
    for grp in mesh.groups:
        ids = grp.cell_ids
        kern = ElementBatch(grp.coords, material.compliance(ids), material.kappa(ids), grp.triangles)
        pts, wts = kern.cell_quadrature(ERROR_DEGREE)
        cen = kern.geo.centroid
        dofs = solution.cell_stress(grp)
        r = rm_values(pts, cen)

        u = exact.u(pts)
        uh = np.einsum("cj,cpjd->cpd", solution.u[ids], r)
        acc["u"] += np.einsum("cp,cpd->", wts, (u - uh) ** 2)
        acc["du"] += np.einsum("cp,cpd->", wts, u ** 2)

        div = exact.div_sigma(pts)
        divh = np.einsum("cj,cpjd->cpd", np.einsum("cji,ci->cj", kern.div_matrix, dofs), r)
        acc["div"] += np.einsum("cp,cpd->", wts, (div - divh) ** 2)
        acc["ref_div"] += np.einsum("cp,cpd->", wts, div ** 2)

        sig = exact.sigma(pts)
        proj = np.einsum("cai,ci->ca", kern.projection_matrix, dofs)
        d = sig - proj[:, None, :]
        acc["proj"] += np.einsum("cp,cpa,ab,cpb->", wts, d, INNER_WEIGHT, d)
        acc["ref_sigma"] += np.einsum("cp,cpa,ab,cpb->", wts, sig, INNER_WEIGHT, sig)

        ub = np.einsum("cj,cpjd->cpd", ubar[ids], r)
        acc["rm"] += np.einsum("cp,cpd->", wts, (ub - uh) ** 2)
        mean = np.einsum("cp,cpd->cd", wts, u) / kern.geo.area[:, None]
        acc["p0"] += np.einsum("cp,cpd->", wts, (mean[:, None, :] - uh) ** 2)

        ps = pstar.evaluate(ids[:, None], pts)
        acc["E0"] += np.einsum("cp,cpd->", wts, (u - ps) ** 2)
        gu = exact.grad_u(pts)
        acc["E1"] += np.einsum("cp,cpij->", wts, (gu - pstar.grad[ids][:, None]) ** 2)
        acc["ref_grad"] += np.einsum("cp,cpij->", wts, gu ** 2)

    es, es_ref = _edge_stress_error(mesh, solution, exact, material)
    em, em_ref = _multiplier_error(mesh, solution, exact)
    return ErrorReport(
        e_u=_rel(acc["u"], acc["du"]),
        e_div=_rel(acc["div"], acc["ref_div"]),
        e_proj=_rel(acc["proj"], acc["ref_sigma"]),
        E_sigma=_rel(es, es_ref),
        e_rm=_rel(acc["rm"], acc["du"]),
        e_p0=_rel(acc["p0"], acc["du"]),
        E0=_rel(acc["E0"], acc["du"]),
        E1=_rel(acc["E1"], acc["ref_grad"]),
        e_mult=_rel(em, em_ref),
    )


def _edge_points(mesh: Mesh, edges):
    xi, w = gauss_legendre(EDGE_ERROR_DEGREE)
    L = mesh.edge_length[edges]
    pts = mesh.edge_midpoint[edges][:, None, :] + \
        xi[:, None] * (0.5 * L[:, None] * mesh.edge_tangent[edges])[:, None, :]
    return xi, 0.5 * L[:, None] * w, pts


def _edge_stress_error(mesh, solution, exact, material):
    """Sum over edges of ``h_e int_e kappa |(sigma - sigma_h) n|^2``."""
    e = np.arange(mesh.n_edges)
    xi, wl, pts = _edge_points(mesh, e)
    t, n = mesh.edge_tangent, mesh.edge_normal
    dof = edge_traces(solution)
    th = dof[:, None, 0:1] * t[:, None, :] + (dof[:, None, 1:2] + dof[:, None, 2:3] * xi[:, None]) * n[:, None, :]
    sig = to_tensor(exact.sigma(pts))
    te = np.einsum("eqij,ej->eqi", sig, n)
    kap = material.kappa()
    cells = mesh.edge_cells
    kr = np.where(cells[:, 1] >= 0, kap[np.maximum(cells[:, 1], 0)], kap[cells[:, 0]])
    k_e = 0.5 * (kap[cells[:, 0]] + kr)
    scale = mesh.edge_length * k_e
    err = np.einsum("e,eq,eqi->", scale, wl, (te - th) ** 2)
    ref = np.einsum("e,eq,eqi->", scale, wl, te ** 2)
    return float(err), float(ref)


def _multiplier_error(mesh, solution, exact):
    """Sum over interior edges of ``h_e |e| |mean(lam_h - u)|^2``."""
    ie = mesh.interior_edges
    if len(ie) == 0 or solution.lam is None:
        return 0.0, 0.0
    xi, wl, pts = _edge_points(mesh, ie)
    L = mesh.edge_length[ie]
    ubar = np.einsum("eq,eqd->ed", wl, exact.u(pts)) / L[:, None]
    lam = solution.lam
    lbar = lam[:, 0:1] * mesh.edge_tangent[ie] + lam[:, 1:2] * mesh.edge_normal[ie]
    err = np.sum(L * L * np.sum((lbar - ubar) ** 2, axis=1))
    ref = np.sum(L * L * np.sum(ubar ** 2, axis=1))
    return float(err), float(ref)


# -- convergence -------------------------------------------------------------

def convergence_rate(e0: float, e1: float, h0: float, h1: float) -> float:
    return float(np.log(e0 / e1) / np.log(h0 / h1))


@dataclass
class LevelResult:
    n: int
    h: float
    errors: ErrorReport
    hybrid_dim: int
    saddle_dim: int
    n_interior: int
    spd: bool
    equivalence: dict[str, float] | None = None


@dataclass
class ConvergenceTable:
    family: str
    rows: list[LevelResult] = field(default_factory=list)

    @property
    def h(self) -> np.ndarray:
        return np.array([r.h for r in self.rows])

    def errors(self, name: str) -> np.ndarray:
        return np.array([getattr(r.errors, name) for r in self.rows])

    def rates(self, name: str) -> np.ndarray:
        """Rates between consecutive levels."""
        e, h = self.errors(name), self.h
        return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])

    def last_rate(self, name: str) -> float:
        return float(self.rates(name)[-1])

    def fitted_rate(self, name: str) -> float:
        """Least-squares slope of log(error) against log(h) over all levels."""
        return float(np.polyfit(np.log(self.h), np.log(self.errors(name)), 1)[0])

    def write_csv(self, outdir) -> tuple[Path, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        table = outdir / "convergence.csv"
        rates = outdir / "rates.csv"
        with table.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["h", *ERROR_NAMES])
            for r in self.rows:
                w.writerow([f"{r.h:.17g}", *(f"{v:.17g}" for v in r.errors.as_dict().values())])
        with rates.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["levels", *ERROR_NAMES])
            per = {k: self.rates(k) for k in ERROR_NAMES}
            for i in range(len(self.rows) - 1):
                w.writerow([f"{self.rows[i].n}-{self.rows[i + 1].n}",
                            *(f"{per[k][i]:.6f}" for k in ERROR_NAMES)])
            w.writerow(["lsq", *(f"{self.fitted_rate(k):.6f}" for k in ERROR_NAMES)])
        return table, rates


def solve_and_measure(mesh: Mesh, exact: ManufacturedSolution, material: MaterialField | None = None,
                      *, tol: float = 1e-10, compare: bool = False, n: int = 0):
    """Hybrid solve plus all error norms on one mesh.

    Returns ``(LevelResult, Solution, P1DisplacementField)``.
    """
    material = material or MaterialField.uniform(exact.params, mesh.n_cells)
    broken = assemble_broken(mesh, material, exact.f, exact.g)
    cond = static_condense(broken)
    # raises FactorizationError when K is not SPD
    lam = solve_multipliers(cond, tol)
    sol = back_substitute(cond, lam)
    pstar = pi_nabla(build_ustar(mesh, sol.lam, exact.g))
    errs = compute_errors(mesh, sol, pstar, exact, material)
    equiv = None
    if compare:
        conf = solve_conforming(mesh, material, exact.f, exact.g, tol)
        equiv = relative_difference(sol, conf)
    res = LevelResult(n, mesh.h, errs, cond.dimension, broken.dofmap.saddle_dimension,
                      len(mesh.interior_edges), True, equiv)
    return res, sol, pstar


def run_convergence(family: str, levels: Sequence[int], exact: ManufacturedSolution | None = None,
                    *, jitter: float = 0.3, seed: int = 0, tol: float = 1e-10,
                    compare: bool = False) -> ConvergenceTable:
    """Solve on ``family`` meshes with ``n`` cells per side for each level."""
    if len(levels) < 2:
        raise ValueError("need at least two refinement levels")
    exact = exact or testcase_2d()
    table = ConvergenceTable(family)
    for n in levels:
        mesh = generate_family(family, n, jitter=jitter, seed=seed)
        res, _, _ = solve_and_measure(mesh, exact, tol=tol, compare=compare, n=n)
        log.info("%s n=%d h=%.4g %s", family, n, res.h, res.errors.as_dict())
        table.rows.append(res)
    return table
