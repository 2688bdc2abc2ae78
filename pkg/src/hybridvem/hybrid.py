"""Global assembly, hybridisation, static condensation and the reference
conforming saddle-point solver.

Broken stress dofs are numbered cell by cell (``3 nv`` per cell, in
local edge order), displacements as three rigid-motion coefficients per
cell and multipliers as three ``R(e)`` coefficients per interior edge,
expressed in the global edge frame (tangent/normal of the edge's left
cell).  Seen from a cell that is the right neighbour of an edge, the
global frame is the local one flipped, so the local coefficients of a
global ``(c, a0, a1)`` are ``(c, a0, -a1)``.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .element import BOUNDARY_DEGREE, ElementBatch
from .material import MaterialField
from .mesh import CellGroup, Mesh
from .quadrature import gauss_legendre

try:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError
    from sksparse.cholmod import cholesky as _cholmod_cholesky
except ImportError:  # pragma: no cover - exercised only without CHOLMOD
    _cholmod_cholesky = None

log = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    pass


class FactorizationError(SolverError):
    pass


# -- dof bookkeeping ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DofMap:
    stress_offset: np.ndarray   # (N_E + 1,) broken stress offsets
    n_cells: int
    n_edges: int
    n_interior: int

    @classmethod
    def build(cls, mesh: Mesh) -> "DofMap":
        off = np.zeros(mesh.n_cells + 1, dtype=np.int64)
        np.cumsum(3 * mesh.cell_nv, out=off[1:])
        return cls(off, mesh.n_cells, mesh.n_edges, len(mesh.interior_edges))

    @property
    def n_stress(self) -> int:
        return int(self.stress_offset[-1])

    @property
    def n_displacement(self) -> int:
        return 3 * self.n_cells

    @property
    def n_multiplier(self) -> int:
        return 3 * self.n_interior

    @property
    def n_conforming_stress(self) -> int:
        return 3 * self.n_edges

    @property
    def saddle_dimension(self) -> int:
        return self.n_conforming_stress + self.n_displacement

    def stress_index(self, group: CellGroup) -> np.ndarray:
        return self.stress_offset[group.cell_ids][:, None] + np.arange(3 * group.nv)

    def multiplier_index(self, mesh: Mesh, group: CellGroup) -> np.ndarray:
        """Global multiplier dof per local stress dof, -1 on boundary edges."""
        ii = mesh.interior_index[group.edge_ids]
        idx = 3 * ii[..., None] + np.arange(3)
        idx[ii < 0] = -1
        return idx.reshape(len(group.cell_ids), -1)

    def conforming_index(self, group: CellGroup) -> tuple[np.ndarray, np.ndarray]:
        """Global conforming stress dof and orientation sign per local dof."""
        idx = 3 * group.edge_ids[..., None] + np.arange(3)
        sign = np.ones(idx.shape)
        sign[..., 2] = np.where(group.owner, 1.0, -1.0)
        nc = len(group.cell_ids)
        return idx.reshape(nc, -1), sign.reshape(nc, -1)


# -- broken system -----------------------------------------------------------

@dataclass(eq=False)
class GroupBlocks:
    group: CellGroup
    kernel: ElementBatch
    A: np.ndarray        # (nc, m, m)
    B: np.ndarray        # (nc, m, 3)
    C: np.ndarray        # (nc, m, m) columns: local multiplier slots
    G: np.ndarray        # (nc, m)
    F: np.ndarray        # (nc, 3)   = -(f, r_j)
    stress_idx: np.ndarray
    mult_idx: np.ndarray


@dataclass(eq=False)
class BrokenSystem:
    mesh: Mesh
    material: MaterialField
    dofmap: DofMap
    blocks: list[GroupBlocks]

    def _sparse(self, name, ncols, col_index):
        rows, cols, vals = [], [], []
        for b in self.blocks:
            M = getattr(b, name)
            ci = col_index(b)
            r = np.broadcast_to(b.stress_idx[:, :, None], M.shape)
            c = np.broadcast_to(ci[:, None, :], M.shape)
            keep = (c >= 0) & (M != 0)
            rows.append(r[keep])
            cols.append(c[keep])
            vals.append(M[keep])
        n = self.dofmap.n_stress
        return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, ncols))

    @property
    def A_tilde(self) -> sps.csr_matrix:
        return self._sparse("A", self.dofmap.n_stress, lambda b: b.stress_idx)

    @property
    def B_tilde(self) -> sps.csr_matrix:
        return self._sparse("B", self.dofmap.n_displacement,
                            lambda b: 3 * b.group.cell_ids[:, None] + np.arange(3))

    @property
    def C_tilde(self) -> sps.csr_matrix:
        return self._sparse("C", self.dofmap.n_multiplier, lambda b: b.mult_idx)

    @property
    def G_tilde(self) -> np.ndarray:
        out = np.zeros(self.dofmap.n_stress)
        for b in self.blocks:
            out[b.stress_idx] = b.G
        return out

    @property
    def F_tilde(self) -> np.ndarray:
        out = np.zeros(self.dofmap.n_displacement)
        for b in self.blocks:
            out[3 * b.group.cell_ids[:, None] + np.arange(3)] = b.F
        return out


def _multiplier_coupling(kernel: ElementBatch, group: CellGroup, mesh: Mesh) -> np.ndarray:
    # global multiplier basis seen from the cell: (s t, s n, xi n), s = +-1
    s = np.where(group.owner, 1.0, -1.0)
    scale = np.stack([s, s, np.ones_like(s)], axis=-1)           # (nc, nv, 3)
    gram = kernel.edge_trace_mass()                               # (nc, nv, 3, 3)
    blocks = -gram * scale[..., None, :]
    interior = ~mesh.is_boundary_edge[group.edge_ids]
    blocks = blocks * interior[..., None, None]
    nc, nv = group.edge_ids.shape
    C = np.zeros((nc, nv, 3, nv, 3))
    for k in range(nv):
        C[:, k, :, k, :] = blocks[:, k]
    return C.reshape(nc, 3 * nv, 3 * nv)


def _boundary_load(kernel: ElementBatch, group: CellGroup, mesh: Mesh, g: VectorField) -> np.ndarray:
    nc, nv = group.edge_ids.shape
    G = np.zeros((nc, nv, 3))
    cell, k = np.nonzero(mesh.is_boundary_edge[group.edge_ids])
    if len(cell) == 0:
        return G.reshape(nc, -1)
    geo = kernel.geo
    xi, w = gauss_legendre(BOUNDARY_DEGREE)
    L = geo.edge_length[cell, k]
    t = geo.tangent[cell, k]
    n = geo.normal[cell, k]
    pts = geo.midpoint[cell, k][:, None, :] + xi[:, None] * (0.5 * L[:, None] * t)[:, None, :]
    gv = np.asarray(g(pts), dtype=float)                           # (nb, nq, 2)
    wl = 0.5 * L[:, None] * w
    gt = np.einsum("bq,bqc,bc->b", wl, gv, t)
    gn = np.einsum("bq,bqc,bc->b", wl, gv, n)
    gxn = np.einsum("bq,q,bqc,bc->b", wl, xi, gv, n)
    G[cell, k] = np.column_stack([gt, gn, gxn])
    return G.reshape(nc, -1)


def assemble_broken(mesh: Mesh, material: MaterialField, f: VectorField, g: VectorField) -> BrokenSystem:
    """Per-cell blocks of the hybrid system (broken stresses, rigid
    displacements, interior-edge multipliers)."""
    if len(material) != mesh.n_cells:
        raise ValueError("material field does not match the mesh")
    dofmap = DofMap.build(mesh)
    blocks = []
    for group in mesh.groups:
        ids = group.cell_ids
        kernel = ElementBatch(group.coords, material.compliance(ids), material.kappa(ids),
                              group.triangles)
        blocks.append(GroupBlocks(
            group=group,
            kernel=kernel,
            A=kernel.A,
            B=kernel.B,
            C=_multiplier_coupling(kernel, group, mesh),
            G=_boundary_load(kernel, group, mesh, g),
            F=-kernel.load(f),
            stress_idx=dofmap.stress_index(group),
            mult_idx=dofmap.multiplier_index(mesh, group),
        ))
    return BrokenSystem(mesh, material, dofmap, blocks)


# -- static condensation -----------------------------------------------------

@dataclass(eq=False)
class _CondensedBlock:
    blocks: GroupBlocks
    AiB: np.ndarray
    AiC: np.ndarray
    AiG: np.ndarray
    S: np.ndarray       # B^T A^-1 B
    SiW: np.ndarray     # S^-1 B^T A^-1 C
    Sig: np.ndarray     # S^-1 (B^T A^-1 G - F)


@dataclass(eq=False)
class CondensedSystem:
    """SPD multiplier system ``K lam = r`` with ``K = -H`` and ``r = -R``."""
    broken: BrokenSystem
    K: sps.csc_matrix
    rhs: np.ndarray
    cache: list[_CondensedBlock]
    # multiplier solver cached by solve_multipliers, reused for refinement
    solver: Callable | None = None

    @property
    def H(self) -> sps.csc_matrix:
        return -self.K

    @property
    def R(self) -> np.ndarray:
        return -self.rhs

    @property
    def dimension(self) -> int:
        return self.K.shape[0]


def _checked_cholesky(M, what, cell_ids):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        for i, c in enumerate(cell_ids):
            try:
                np.linalg.cholesky(M[i])
            except np.linalg.LinAlgError:
                raise FactorizationError(f"{what} not positive definite on cell {c}") from None
        raise


def static_condense(system: BrokenSystem) -> CondensedSystem:
    """Eliminate stresses and displacements cell by cell."""
    n = system.dofmap.n_multiplier
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    cache = []
    for b in system.blocks:
        ids = b.group.cell_ids
        _checked_cholesky(b.A, "stress matrix A_E", ids)
        m = b.A.shape[-1]
        sol = np.linalg.solve(b.A, np.concatenate([b.B, b.C, b.G[..., None]], axis=-1))
        AiB, AiC, AiG = sol[..., :3], sol[..., 3:3 + m], sol[..., -1]
        S = np.einsum("cia,cib->cab", b.B, AiB)
        _checked_cholesky(S, "B^T A^-1 B", ids)
        W = np.einsum("cia,cij->caj", b.B, AiC)
        gvec = np.einsum("cia,ci->ca", b.B, AiG) - b.F
        SiW = np.linalg.solve(S, W)
        Sig = np.linalg.solve(S, gvec[..., None])[..., 0]
        KE = np.einsum("cia,cib->cab", b.C, AiC) - np.einsum("caj,cak->cjk", W, SiW)
        rE = np.einsum("cia,ci->ca", b.C, AiG) - np.einsum("caj,ca->cj", W, Sig)

        mi = b.mult_idx
        r = np.broadcast_to(mi[:, :, None], KE.shape)
        c = np.broadcast_to(mi[:, None, :], KE.shape)
        keep = (r >= 0) & (c >= 0)
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append(KE[keep])
        ok = mi >= 0
        np.add.at(rhs, mi[ok], rE[ok])
        cache.append(_CondensedBlock(b, AiB, AiC, AiG, S, SiW, Sig))
    K = sps.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(n, n))
    K.sum_duplicates()
    return CondensedSystem(system, K, rhs, cache)


# -- solutions ---------------------------------------------------------------

@dataclass(eq=False)
class Solution:
    mesh: Mesh
    dofmap: DofMap
    sigma: np.ndarray              # broken stress dofs (n_stress,)
    u: np.ndarray                  # (N_E, 3) rigid-motion coefficients
    lam: np.ndarray | None = None  # (n_interior, 3) multipliers, global edge frame
    info: dict = field(default_factory=dict)

    def stress_dofs(self, cell: int) -> np.ndarray:
        off = self.dofmap.stress_offset
        return self.sigma[off[cell]:off[cell + 1]]

    def cell_stress(self, group: CellGroup) -> np.ndarray:
        return self.sigma[self.dofmap.stress_index(group)]

    def traction_jumps(self) -> np.ndarray:
        """Per interior edge, max jump of the traction dofs across the edge."""
        mesh = self.mesh
        left = np.zeros((mesh.n_edges, 3))
        right = np.zeros((mesh.n_edges, 3))
        for g in mesh.groups:
            loc = self.cell_stress(g).reshape(len(g.cell_ids), g.nv, 3)
            own = g.owner
            left[g.edge_ids[own]] = loc[own]
            flipped = loc * np.array([1.0, 1.0, -1.0])
            right[g.edge_ids[~own]] = flipped[~own]
        ie = mesh.interior_edges
        return np.abs(left[ie] - right[ie]).max(axis=1)


def factor_spd(K: sps.spmatrix):
    """Sparse Cholesky of an SPD matrix; raises FactorizationError otherwise.

    Returns a callable solving ``K x = b``.
    """
    K = sps.csc_matrix(K)
    if K.shape[0] == 0:
        return lambda b: np.zeros(0)
    if _cholmod_cholesky is not None:
        try:
            return _cholmod_cholesky(K, mode="supernodal")
        except CholmodNotPositiveDefiniteError as exc:
            raise FactorizationError(f"matrix not positive definite: {exc}") from None
    # fallback: LU without off-diagonal pivoting; positive pivots <=> SPD
    lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    if not (np.array_equal(lu.perm_r, lu.perm_c) and np.all(lu.U.diagonal() > 0)):
        raise FactorizationError("matrix not positive definite")
    return lu.solve


def solve_multipliers(cond: CondensedSystem, tol: float = 1e-10, method: str = "cholesky") -> np.ndarray:
    """Solve ``K lam = r``.

    The returned iterate is kept in extended precision: for nearly
    incompressible materials ``K`` is so badly scaled that a float64
    vector cannot reach a relative residual of 1e-10.
    """
    K, r = cond.K, cond.rhs
    if K.shape[0] == 0:
        return np.zeros(0)
    if method == "cholesky":
        solve = factor_spd(K)
    elif method == "cg":
        d = K.diagonal()
        if np.any(d <= 0):
            raise FactorizationError("matrix not positive definite")
        M = spla.LinearOperator(K.shape, matvec=lambda x: x / d)

        def solve(rhs):
            x, info = spla.cg(K, rhs, rtol=tol, atol=0.0, M=M, maxiter=20 * K.shape[0])
            if info != 0:
                raise SolverError(f"conjugate gradients did not converge (info={info})")
            return x
    else:
        raise ValueError(f"unknown multiplier solver {method!r}")
    cond.solver = solve
    lam = _refine(K, solve, r, tol)
    _check_residual(K, lam, r, tol)
    return lam


def _residual(K, x, b) -> np.ndarray:
    """``b - K x`` accumulated in extended precision."""
    K = sps.coo_matrix(K)
    acc = np.array(b, dtype=np.longdouble)
    prod = K.data.astype(np.longdouble) * np.asarray(x, dtype=np.longdouble)[K.col]
    np.subtract.at(acc, K.row, prod)
    return acc


def _refine(K, solve, b, tol, steps=5) -> np.ndarray:
    """Solve, then refine with residuals and iterate in extended precision."""
    nb = np.linalg.norm(b)
    x = np.asarray(solve(b), dtype=np.longdouble)
    for _ in range(steps):
        res = _residual(K, x, b).astype(float)
        if np.linalg.norm(res) <= 0.01 * tol * nb:
            break
        x += solve(res)
    else:
        log.debug("refinement stopped after %d steps", steps)
    return x


def _check_residual(K, x, b, tol):
    nb = np.linalg.norm(b)
    res = float(np.linalg.norm(_residual(K, x, b).astype(float)))
    if res > tol * nb and res > 0:
        raise SolverError(f"relative residual {res / nb:.3e} above tolerance {tol:.1e}")


def _local(values, mi):
    out = np.zeros(mi.shape, dtype=values.dtype)
    out[mi >= 0] = values[mi[mi >= 0]]
    return out


def _broken_residual(cond: CondensedSystem, sigma, u, lam):
    """Residuals of the uncondensed equations
    ``A s + B u + C lam = G``, ``B^T s = F``, ``C^T s = 0``."""
    dm = cond.broken.dofmap
    r_s = np.zeros(dm.n_stress)
    r_u = np.zeros((dm.n_cells, 3))
    r_l = np.zeros(dm.n_multiplier)
    for cb in cond.cache:
        b = cb.blocks
        ids = b.group.cell_ids
        s = sigma[b.stress_idx]
        lam_loc = _local(lam, b.mult_idx)
        r_s[b.stress_idx] = (b.G - np.einsum("cij,cj->ci", b.A, s) - np.einsum("cia,ca->ci", b.B, u[ids])
                             - np.einsum("cij,cj->ci", b.C, lam_loc))
        r_u[ids] = b.F - np.einsum("cia,ci->ca", b.B, s)
        ok = b.mult_idx >= 0
        np.add.at(r_l, b.mult_idx[ok], -np.einsum("cij,ci->cj", b.C, s)[ok])
    return r_s, r_u, r_l


def _block_solve(cond: CondensedSystem, r_s, r_u, r_l):
    """Apply the condensed elimination to a general right-hand side."""
    rhs = -np.asarray(r_l, dtype=float)
    parts = []
    for cb in cond.cache:
        b = cb.blocks
        Aig = np.linalg.solve(b.A, r_s[b.stress_idx][..., None])[..., 0]
        Sib = np.linalg.solve(cb.S, (np.einsum("cia,ci->ca", b.B, Aig) - r_u[b.group.cell_ids])[..., None])[..., 0]
        rE = np.einsum("cia,ci->ca", b.C, Aig) - np.einsum("caj,ca->cj", cb.SiW, Sib)
        ok = b.mult_idx >= 0
        np.add.at(rhs, b.mult_idx[ok], rE[ok])
        parts.append((Aig, Sib))
    lam = cond.solver(rhs) if len(rhs) else np.zeros(0)
    dm = cond.broken.dofmap
    sigma = np.zeros(dm.n_stress)
    u = np.zeros((dm.n_cells, 3))
    for cb, (Aig, Sib) in zip(cond.cache, parts):
        b = cb.blocks
        lam_loc = _local(lam, b.mult_idx)
        uE = Sib - np.einsum("caj,cj->ca", cb.SiW, lam_loc)
        sigma[b.stress_idx] = Aig - np.einsum("cia,ca->ci", cb.AiB, uE) - np.einsum("cij,cj->ci", cb.AiC, lam_loc)
        u[b.group.cell_ids] = uE
    return sigma, u, lam


def back_substitute(cond: CondensedSystem, lam: np.ndarray, refine: int = 3) -> Solution:
    """Recover displacements and stresses cell by cell from the multipliers.

    When ``solve_multipliers`` has cached its solver, up to ``refine``
    correction steps are taken against the residual of the uncondensed
    equations.  Forming the condensed matrix loses accuracy when ``A_E``
    is badly conditioned (nearly incompressible materials); the blocks
    themselves do not.
    """
    sysm = cond.broken
    dm = sysm.dofmap
    sigma = np.zeros(dm.n_stress)
    u = np.zeros((dm.n_cells, 3))
    lam = np.asarray(lam)
    for cb in cond.cache:
        b = cb.blocks
        lam_loc = _local(lam, b.mult_idx)
        uE = cb.Sig - np.einsum("caj,cj->ca", cb.SiW, lam_loc)
        sE = cb.AiG - np.einsum("cia,ca->ci", cb.AiB, uE) - np.einsum("cij,cj->ci", cb.AiC, lam_loc)
        u[b.group.cell_ids] = uE
        sigma[b.stress_idx] = sE
    if cond.solver is not None:
        lam = lam.astype(np.longdouble)
        for _ in range(refine):
            ds, du, dl = _block_solve(cond, *_broken_residual(cond, sigma, u, lam.astype(float)))
            sigma += ds
            u += du
            lam += dl
            if np.linalg.norm(ds) <= 1e-15 * np.linalg.norm(sigma):
                break
    return Solution(sysm.mesh, dm, sigma, u, lam.astype(float).reshape(-1, 3))


def solve_condensed(cond: CondensedSystem, tol: float = 1e-10, method: str = "cholesky") -> Solution:
    lam = solve_multipliers(cond, tol, method)
    return back_substitute(cond, lam)


def solve_hybrid(mesh: Mesh, material: MaterialField, f: VectorField, g: VectorField,
                 tol: float = 1e-10, method: str = "cholesky") -> Solution:
    return solve_condensed(static_condense(assemble_broken(mesh, material, f, g)), tol, method)


# -- conforming reference ----------------------------------------------------

@dataclass(eq=False)
class ConformingSystem:
    broken: BrokenSystem
    matrix: sps.csc_matrix
    rhs: np.ndarray

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def assemble_conforming(mesh: Mesh, material: MaterialField, f: VectorField, g: VectorField,
                        broken: BrokenSystem | None = None) -> ConformingSystem:
    """Indefinite system with one set of stress dofs per edge."""
    broken = broken or assemble_broken(mesh, material, f, g)
    dm = broken.dofmap
    ns = dm.n_conforming_stress
    rows, cols, vals = [], [], []
    rhs = np.zeros(dm.saddle_dimension)
    for b in broken.blocks:
        idx, sign = dm.conforming_index(b.group)
        A = b.A * sign[:, :, None] * sign[:, None, :]
        B = b.B * sign[:, :, None]
        ucol = ns + 3 * b.group.cell_ids[:, None] + np.arange(3)
        for M, r, c in ((A, idx[:, :, None], idx[:, None, :]),
                        (B, idx[:, :, None], ucol[:, None, :])):
            r = np.broadcast_to(r, M.shape).ravel()
            c = np.broadcast_to(c, M.shape).ravel()
            rows += [r, c] if M is B else [r]
            cols += [c, r] if M is B else [c]
            vals += [M.ravel(), M.ravel()] if M is B else [M.ravel()]
        np.add.at(rhs, idx, b.G * sign)
        rhs[ucol] = b.F
    n = dm.saddle_dimension
    K = sps.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(n, n))
    K.sum_duplicates()
    return ConformingSystem(broken, K, rhs)


def solve_conforming_system(cs: ConformingSystem, tol: float = 1e-10) -> Solution:
    try:
        lu = spla.splu(cs.matrix)
    except RuntimeError as exc:
        raise FactorizationError(f"saddle-point factorization failed: {exc}") from None
    x = _refine(cs.matrix, lu.solve, cs.rhs, tol)
    _check_residual(cs.matrix, x, cs.rhs, tol)
    x = x.astype(float)
    dm = cs.broken.dofmap
    ns = dm.n_conforming_stress
    sigma = np.zeros(dm.n_stress)
    for b in cs.broken.blocks:
        idx, sign = dm.conforming_index(b.group)
        sigma[b.stress_idx] = sign * x[idx]
    return Solution(cs.broken.mesh, dm, sigma, x[ns:].reshape(-1, 3))


def solve_conforming(mesh: Mesh, material: MaterialField, f: VectorField, g: VectorField,
                     tol: float = 1e-10) -> Solution:
    return solve_conforming_system(assemble_conforming(mesh, material, f, g), tol)


def relative_difference(a: Solution, b: Solution) -> dict[str, float]:
    """Relative differences of the stress and displacement dof vectors."""
    def rel(x, y):
        ny = np.linalg.norm(y)
        d = np.linalg.norm(x - y)
        return float(d / ny) if ny > 0 else float(d)
    return {"sigma": rel(a.sigma, b.sigma), "u": rel(a.u.ravel(), b.u.ravel())}


# -- timing ------------------------------------------------------------------

@dataclass(frozen=True)
class TimingRow:
    solver: str
    phase: str
    seconds: float
    dimension: int
    nnz: int


def _timed(fn, repeats):
    fn()  # warm-up, discarded
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return median(times), out


def timing_report(mesh: Mesh, material: MaterialField, f: VectorField, g: VectorField,
                  repeats: int = 3, tol: float = 1e-10, equivalence_tol: float = 1e-8):
    """Phase timings of both solver paths (median of ``repeats`` after a warm-up).

    Returns ``(rows, hybrid_solution, conforming_solution, differences)``;
    raises SolverError when the two solutions disagree.
    """
    t_asm, broken = _timed(lambda: assemble_broken(mesh, material, f, g), repeats)
    t_cond, cond = _timed(lambda: static_condense(broken), repeats)
    t_solve, lam = _timed(lambda: solve_multipliers(cond, tol), repeats)
    t_back, hyb = _timed(lambda: back_substitute(cond, lam), repeats)
    hdim, hnnz = cond.dimension, cond.K.nnz

    t_casm, cs = _timed(lambda: assemble_conforming(mesh, material, f, g), repeats)
    t_csolve, conf = _timed(lambda: solve_conforming_system(cs, tol), repeats)
    cdim, cnnz = cs.dimension, cs.matrix.nnz

    diff = relative_difference(hyb, conf)
    if max(diff.values()) > equivalence_tol:
        raise SolverError(f"hybrid and conforming solutions differ: {diff}")
    rows = [
        TimingRow("hybrid", "assembly", t_asm, hdim, hnnz),
        TimingRow("hybrid", "condensation", t_cond, hdim, hnnz),
        TimingRow("hybrid", "solve", t_solve, hdim, hnnz),
        TimingRow("hybrid", "backsubstitution", t_back, hdim, hnnz),
        TimingRow("conforming", "assembly", t_casm, cdim, cnnz),
        TimingRow("conforming", "solve", t_csolve, cdim, cnnz),
    ]
    return rows, hyb, conf, diff


# -- export ------------------------------------------------------------------

def _fmt(v) -> str:
    return f"{float(v):.17g}"


def write_solution_csv(solution: Solution, outdir) -> list[Path]:
    """Write ``stress_dofs.csv``, ``displacement.csv`` and, when present,
    ``multipliers.csv`` into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    mesh = solution.mesh
    paths = [outdir / "stress_dofs.csv", outdir / "displacement.csv"]
    with paths[0].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "local_edge", "c", "a0", "a1"])
        for cell in range(mesh.n_cells):
            for k, dofs in enumerate(solution.stress_dofs(cell).reshape(-1, 3)):
                w.writerow([cell, k, *map(_fmt, dofs)])
    with paths[1].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "alpha1", "alpha2", "beta"])
        for cell, row in enumerate(solution.u):
            w.writerow([cell, *map(_fmt, row)])
    if solution.lam is not None:
        paths.append(outdir / "multipliers.csv")
        with paths[-1].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["edge", "c", "a0", "a1"])
            for e, row in zip(mesh.interior_edges, solution.lam):
                w.writerow([int(e), *map(_fmt, row)])
    return paths


def write_timing_csv(rows, path, level=None) -> None:
    """Timing rows as ``solver,level,phase,seconds,dimension,nnz``."""
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["solver", "level", "phase", "seconds", "dimension", "nnz"])
        for r in rows:
            w.writerow([r.solver, "" if level is None else level, r.phase,
                        f"{r.seconds:.6g}", r.dimension, r.nnz])
