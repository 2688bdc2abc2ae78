"""Polygonal meshes: topology, per-cell geometry, generators and file I/O.

Edges are stored once, oriented the way their lower-index cell (the
"left" cell) traverses them counterclockwise.  The global normal of an
edge is therefore the outward normal of its left cell, and points into
the right cell (or out of the domain on the boundary).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .quadrature import quadrature_on_segment, quadrature_on_triangles

BOUNDARY = -1


class MeshError(ValueError):
    pass


class MeshFormatError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class Edge(NamedTuple):
    v0: int
    v1: int
    left_cell: int
    right_cell: int  # BOUNDARY on the boundary


# -- polygon helpers ---------------------------------------------------------

def signed_area(coords) -> np.ndarray:
    """Shoelace signed area of polygons ``(..., nv, 2)``."""
    x = coords[..., 0]
    y = coords[..., 1]
    xn = np.roll(x, -1, axis=-1)
    yn = np.roll(y, -1, axis=-1)
    return 0.5 * np.sum(x * yn - xn * y, axis=-1)


def polygon_centroid(coords) -> np.ndarray:
    """Area centroid; NaN for zero-area polygons."""
    x = coords[..., 0]
    y = coords[..., 1]
    xn = np.roll(x, -1, axis=-1)
    yn = np.roll(y, -1, axis=-1)
    cross = x * yn - xn * y
    area = 0.5 * np.sum(cross, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cx = np.sum((x + xn) * cross, axis=-1) / (6.0 * area)
        cy = np.sum((y + yn) * cross, axis=-1) / (6.0 * area)
    return np.stack([cx, cy], axis=-1)


def polygon_diameter(coords) -> np.ndarray:
    diff = coords[..., :, None, :] - coords[..., None, :, :]
    return np.sqrt(np.max(np.sum(diff**2, axis=-1), axis=(-2, -1)))


def _orient(a, b, c):
    return ((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
            - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))


def _segments_intersect(p1, p2, q1, q2):
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    # touching counts as intersecting: a simple polygon has no contact
    # between non-adjacent edges
    cross = (d1 * d2 <= 0) & (d3 * d4 <= 0)
    # collinear segments meet only if their extents overlap
    collinear = (d1 == 0) & (d2 == 0)
    overlap = np.ones_like(cross)
    for ax in (0, 1):
        lo_p = np.minimum(p1[..., ax], p2[..., ax])
        hi_p = np.maximum(p1[..., ax], p2[..., ax])
        lo_q = np.minimum(q1[..., ax], q2[..., ax])
        hi_q = np.maximum(q1[..., ax], q2[..., ax])
        overlap &= (lo_p <= hi_q) & (lo_q <= hi_p)
    return np.where(collinear, overlap, cross)


def is_simple(coords) -> np.ndarray:
    """True where the polygons ``(..., nv, 2)`` have no self-intersection."""
    coords = np.asarray(coords, dtype=float)
    nv = coords.shape[-2]
    nxt = np.roll(coords, -1, axis=-2)
    ok = np.ones(coords.shape[:-2], dtype=bool)
    for i in range(nv):
        for j in range(i + 2, nv):
            if i == 0 and j == nv - 1:
                continue
            hit = _segments_intersect(coords[..., i, :], nxt[..., i, :],
                                      coords[..., j, :], nxt[..., j, :])
            ok &= ~hit
    return ok


def is_star_from(coords, point) -> np.ndarray:
    """True where ``point`` lies strictly inside the kernel of the polygon."""
    nxt = np.roll(coords, -1, axis=-2)
    o = _orient(coords, nxt, point[..., None, :])
    return np.all(o > 0, axis=-1)


def ear_clip(coords) -> list[tuple[int, int, int]]:
    """Triangulate a simple counterclockwise polygon by ear clipping."""
    coords = np.asarray(coords, dtype=float)
    idx = list(range(len(coords)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(coords) ** 2:
            raise MeshError("ear clipping failed (polygon not simple?)")
        m = len(idx)
        for k in range(m):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % m]
            a, b, c = coords[i0], coords[i1], coords[i2]
            if _orient(a, b, c) <= 0:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = coords[j]
                if _orient(a, b, p) >= 0 and _orient(b, c, p) >= 0 and _orient(c, a, p) >= 0:
                    inside = True
                    break
            if not inside:
                tris.append((i0, i1, i2))
                idx.pop(k)
                break
    tris.append(tuple(idx))
    return tris


def sub_triangulate(coords) -> np.ndarray:
    """Split one polygon into triangles ``(ntri, 3, 2)``.

    Star-shaped cells (w.r.t. their barycenter) are fanned from the
    barycenter, one triangle per edge; anything else is ear-clipped.
    """
    coords = np.asarray(coords, dtype=float)
    if len(coords) == 3:
        return coords[None].copy()
    c = polygon_centroid(coords)
    if is_star_from(coords, c):
        nxt = np.roll(coords, -1, axis=0)
        return np.stack([np.broadcast_to(c, coords.shape), coords, nxt], axis=1)
    return np.array([[coords[i], coords[j], coords[k]] for i, j, k in ear_clip(coords)])


def quadrature_on_cell(coords, degree: int):
    """Points ``(npts, 2)`` and weights for one polygon via sub-triangulation."""
    pts, wts = quadrature_on_triangles(sub_triangulate(coords), degree)
    return pts.reshape(-1, 2), wts.reshape(-1)


def quadrature_on_edge(p0, p1, degree: int):
    """Gauss points and weights on the straight edge ``p0 -> p1``."""
    return quadrature_on_segment(p0, p1, degree)


# -- geometry ----------------------------------------------------------------

class CellGeometry:
    """Geometry of one or many polygons with the same vertex count.

    ``coords`` has shape ``(..., nv, 2)``; local edge ``k`` joins vertex
    ``k`` to vertex ``k + 1`` and all per-edge arrays are indexed that way.
    """

    def __init__(self, coords):
        coords = np.asarray(coords, dtype=float)
        self.coords = coords
        self.nv = coords.shape[-2]
        self.area = signed_area(coords)
        self.centroid = polygon_centroid(coords)
        self.diameter = polygon_diameter(coords)
        nxt = np.roll(coords, -1, axis=-2)
        vec = nxt - coords
        self.edge_length = np.linalg.norm(vec, axis=-1)
        self.tangent = vec / self.edge_length[..., None]
        self.normal = np.stack([self.tangent[..., 1], -self.tangent[..., 0]], axis=-1)
        self.midpoint = 0.5 * (coords + nxt)

    @property
    def perimeter(self):
        return np.sum(self.edge_length, axis=-1)

    def edge_points(self, xi):
        """Points at reference abscissae ``xi`` in [-1, 1]: ``(..., nv, nq, 2)``."""
        xi = np.asarray(xi, dtype=float)
        half = 0.5 * self.edge_length[..., None, None] * self.tangent[..., None, :]
        return self.midpoint[..., None, :] + xi[:, None] * half


@dataclass(frozen=True)
class CellGroup:
    """Cells sharing a vertex count, stacked for vectorised kernels."""
    nv: int
    cell_ids: np.ndarray      # (nc,)
    vertex_ids: np.ndarray    # (nc, nv)
    coords: np.ndarray        # (nc, nv, 2)
    edge_ids: np.ndarray      # (nc, nv) global edge of each local edge
    owner: np.ndarray         # (nc, nv) True where the cell is the edge's left cell
    triangles: np.ndarray     # (nc, nv, 3, 2) sub-triangulation, zero-area padded

    @cached_property
    def geometry(self) -> CellGeometry:
        return CellGeometry(self.coords)

    def quadrature(self, degree: int):
        pts, wts = quadrature_on_triangles(self.triangles, degree)
        nc = len(self.cell_ids)
        return pts.reshape(nc, -1, 2), wts.reshape(nc, -1)


@dataclass(frozen=True)
class MeshQuality:
    min_edge_ratio: np.ndarray
    star_ratio: np.ndarray
    h: float


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    cells: tuple[np.ndarray, ...]
    edges: np.ndarray            # (M, 2) v0, v1 as traversed by the left cell
    edge_cells: np.ndarray       # (M, 2) left, right (BOUNDARY if none)
    cell_edges: tuple[np.ndarray, ...]
    area: np.ndarray
    diameter: np.ndarray
    centroid: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def is_boundary_edge(self) -> np.ndarray:
        return self.edge_cells[:, 1] == BOUNDARY

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary_edge)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.is_boundary_edge)

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Position of each edge among interior edges, -1 on the boundary."""
        out = np.full(self.n_edges, -1, dtype=np.int64)
        out[self.interior_edges] = np.arange(len(self.interior_edges))
        return out

    @property
    def h(self) -> float:
        """Mean cell diameter."""
        return float(np.mean(self.diameter))

    @cached_property
    def edge_length(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(d, axis=1)

    @cached_property
    def edge_tangent(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return d / self.edge_length[:, None]

    @cached_property
    def edge_normal(self) -> np.ndarray:
        t = self.edge_tangent
        return np.column_stack([t[:, 1], -t[:, 0]])

    @cached_property
    def edge_midpoint(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def edge(self, i: int) -> Edge:
        v0, v1 = self.edges[i]
        left, right = self.edge_cells[i]
        return Edge(int(v0), int(v1), int(left), int(right))

    def cell_coords(self, c: int) -> np.ndarray:
        return self.vertices[self.cells[c]]

    def cell_geometry(self, c: int) -> CellGeometry:
        return CellGeometry(self.cell_coords(c))

    @cached_property
    def cell_nv(self) -> np.ndarray:
        return np.array([len(c) for c in self.cells])

    @cached_property
    def groups(self) -> tuple[CellGroup, ...]:
        out = []
        for nv in np.unique(self.cell_nv):
            ids = np.flatnonzero(self.cell_nv == nv)
            vids = np.array([self.cells[c] for c in ids], dtype=np.int64)
            eids = np.array([self.cell_edges[c] for c in ids], dtype=np.int64)
            owner = self.edge_cells[eids, 0] == ids[:, None]
            coords = self.vertices[vids]
            out.append(CellGroup(int(nv), ids, vids, coords, eids, owner,
                                 _group_triangles(coords)))
        return tuple(out)

    def quality(self) -> MeshQuality:
        ratio = np.empty(self.n_cells)
        star = np.empty(self.n_cells)
        for g in self.groups:
            geo = g.geometry
            ratio[g.cell_ids] = geo.edge_length.min(axis=-1) / geo.diameter
            # distance from the barycenter to every edge line; a ball of that
            # radius lies in the kernel whenever the barycenter does
            rel = geo.centroid[:, None, :] - geo.midpoint
            dist = -np.einsum("cki,cki->ck", rel, geo.normal)
            inside = np.all(dist > 0, axis=1)
            star[g.cell_ids] = np.where(inside, dist.min(axis=1), 0.0) / geo.diameter
        return MeshQuality(ratio, star, self.h)


def _group_triangles(coords):
    nc, nv, _ = coords.shape
    if nv == 3:
        tris = np.zeros((nc, 3, 3, 2))
        tris[:, 0] = coords
        return tris
    c = polygon_centroid(coords)
    nxt = np.roll(coords, -1, axis=1)
    tris = np.stack([np.broadcast_to(c[:, None, :], coords.shape), coords, nxt], axis=2)
    bad = np.flatnonzero(~is_star_from(coords, c))
    for i in bad:
        t = np.zeros((nv, 3, 2))
        clipped = ear_clip(coords[i])
        t[: len(clipped)] = [[coords[i][a], coords[i][b], coords[i][d]] for a, b, d in clipped]
        tris[i] = t
    return tris


# -- construction ------------------------------------------------------------

def build_mesh(vertices, cells: Sequence[Sequence[int]], *, warn: bool = True) -> Mesh:
    """Validate a vertex/cell description and build the edge topology.

    Clockwise cells are reversed to counterclockwise.  Raises
    :class:`MeshError` on invalid indices, duplicate vertices in a cell,
    degenerate or self-intersecting cells, and non-manifold edges.
    """
    vertices = np.array(vertices, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(vertices)):
        raise MeshError("non-finite vertex coordinates")
    nvert = len(vertices)
    scale = max(float(np.ptp(vertices, axis=0).max()) if nvert else 1.0, 1e-300)

    norm_cells = []
    for c, cell in enumerate(cells):
        ids = np.array(cell, dtype=np.int64).ravel()
        if len(ids) < 3:
            raise MeshError(f"cell {c}: cell has fewer than 3 vertices")
        if ids.min() < 0 or ids.max() >= nvert:
            raise MeshError(f"cell {c}: vertex index out of range")
        if len(np.unique(ids)) != len(ids):
            raise MeshError(f"cell {c}: duplicate vertex within cell")
        xy = vertices[ids]
        a = signed_area(xy)
        if abs(a) <= 1e-14 * scale**2:
            raise MeshError(f"cell {c}: degenerate (zero-area) cell")
        if a < 0:
            ids = ids[::-1].copy()
            xy = xy[::-1]
        if not is_simple(xy):
            raise MeshError(f"cell {c}: cell is not a simple polygon")
        norm_cells.append(ids)

    edge_of = {}
    edges = []
    edge_cells = []
    cell_edges = []
    for c, ids in enumerate(norm_cells):
        local = np.empty(len(ids), dtype=np.int64)
        for k in range(len(ids)):
            a, b = int(ids[k]), int(ids[(k + 1) % len(ids)])
            key = (a, b) if a < b else (b, a)
            e = edge_of.get(key)
            if e is None:
                e = len(edges)
                edge_of[key] = e
                edges.append((a, b))
                edge_cells.append([c, BOUNDARY])
            else:
                if edge_cells[e][1] != BOUNDARY or edge_cells[e][0] == c:
                    raise MeshError(f"non-manifold edge ({a}, {b}) shared by more than 2 cells")
                if edges[e] != (b, a):
                    raise MeshError(f"cells {edge_cells[e][0]} and {c} overlap along edge ({a}, {b})")
                edge_cells[e][1] = c
            local[k] = e
        cell_edges.append(local)

    coords = [vertices[ids] for ids in norm_cells]
    mesh = Mesh(
        vertices=vertices,
        cells=tuple(norm_cells),
        edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
        edge_cells=np.array(edge_cells, dtype=np.int64).reshape(-1, 2),
        cell_edges=tuple(cell_edges),
        area=np.array([signed_area(x) for x in coords]),
        diameter=np.array([polygon_diameter(x) for x in coords]),
        centroid=np.array([polygon_centroid(x) for x in coords]).reshape(-1, 2),
    )
    if warn:
        q = mesh.quality()
        nbad = int(np.sum(q.star_ratio <= 0))
        if nbad:
            warnings.warn(f"{nbad} cell(s) not star-shaped w.r.t. their barycenter",
                          stacklevel=2)
    return mesh


def _grid_vertices(n: int) -> np.ndarray:
    x = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(x, x, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def _grid_quads(n: int) -> np.ndarray:
    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (j * (n + 1) + i).ravel()
    return np.column_stack([v00, v00 + 1, v00 + n + 2, v00 + n + 1])


def generate_square_grid(n: int) -> Mesh:
    """``n x n`` unit squares on the unit square."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return build_mesh(_grid_vertices(n), _grid_quads(n))


def generate_tria_grid(n: int) -> Mesh:
    """Structured triangulation: every grid square split along its SW-NE diagonal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    q = _grid_quads(n)
    tris = np.empty((2 * len(q), 3), dtype=np.int64)
    tris[0::2] = q[:, [0, 1, 2]]
    tris[1::2] = q[:, [0, 2, 3]]
    return build_mesh(_grid_vertices(n), tris)


def generate_rand_grid(n: int, jitter: float = 0.3, seed: int = 0,
                       max_retries: int = 20) -> Mesh:
    """``n x n`` grid with interior vertices randomly displaced.

    Each interior coordinate moves by at most ``jitter / n``; boundary
    vertices stay put.  Invalid draws are rejected and redrawn.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= jitter < 0.5:
        raise ValueError("jitter must lie in [0, 0.5)")
    base = _grid_vertices(n)
    quads = _grid_quads(n)
    on_bnd = np.any((base <= 0.0) | (base >= 1.0), axis=1)
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        shift = rng.uniform(-jitter / n, jitter / n, size=base.shape)
        shift[on_bnd] = 0.0
        verts = base + shift
        xy = verts[quads]
        if np.all(signed_area(xy) > 0) and np.all(is_simple(xy)):
            return build_mesh(verts, quads)
    raise MeshError(f"could not draw a valid random mesh in {max_retries} attempts")


# -- file I/O ----------------------------------------------------------------

def save_mesh(mesh: Mesh, path) -> None:
    lines = ["polymesh 1", f"vertices {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices.tolist()]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join(str(int(v)) for v in c) for c in mesh.cells]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_mesh(text: str) -> tuple[np.ndarray, list[list[int]]]:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows or rows[0][1] != ["polymesh", "1"]:
        raise MeshFormatError("expected header 'polymesh 1'", rows[0][0] if rows else 1)
    pos = 1

    def section(name):
        nonlocal pos
        if pos >= len(rows):
            raise MeshFormatError(f"missing '{name}' section", rows[-1][0])
        lineno, tok = rows[pos]
        if len(tok) != 2 or tok[0] != name:
            raise MeshFormatError(f"expected '{name} <count>'", lineno)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshFormatError(f"bad {name} count {tok[1]!r}", lineno) from None
        pos += 1
        if pos + count > len(rows):
            raise MeshFormatError(f"file ends inside '{name}' section", rows[-1][0])
        body = rows[pos:pos + count]
        pos += count
        return body

    verts = []
    for lineno, tok in section("vertices"):
        if len(tok) != 2:
            raise MeshFormatError("vertex line needs 2 coordinates", lineno)
        try:
            verts.append((float(tok[0]), float(tok[1])))
        except ValueError:
            raise MeshFormatError("bad vertex coordinate", lineno) from None
    cells = []
    for lineno, tok in section("cells"):
        try:
            ids = [int(t) for t in tok]
        except ValueError:
            raise MeshFormatError("bad vertex index", lineno) from None
        if len(ids) < 3:
            raise MeshFormatError("cell has fewer than 3 vertices", lineno)
        cells.append(ids)
    if pos != len(rows):
        raise MeshFormatError("trailing content after cells", rows[pos][0])
    return np.array(verts, dtype=float).reshape(-1, 2), cells


def load_mesh(path) -> Mesh:
    verts, cells = parse_mesh(Path(path).read_text(encoding="utf-8"))
    return build_mesh(verts, cells)


FAMILIES = ("square", "tria", "rand")


def generate_family(family: str, n: int, *, jitter: float = 0.3, seed: int = 0) -> Mesh:
    if family == "square":
        return generate_square_grid(n)
    if family == "tria":
        return generate_tria_grid(n)
    if family == "rand":
        return generate_rand_grid(n, jitter=jitter, seed=seed)
    raise ValueError(f"unknown mesh family {family!r}")
