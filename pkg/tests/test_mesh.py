import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cells import fixture_cells
from hybridvem.mesh import (
    BOUNDARY,
    CellGeometry,
    MeshError,
    MeshFormatError,
    build_mesh,
    generate_family,
    generate_rand_grid,
    generate_square_grid,
    generate_tria_grid,
    load_mesh,
    parse_mesh,
    polygon_centroid,
    quadrature_on_cell,
    quadrature_on_edge,
    save_mesh,
    signed_area,
    is_simple,
    sub_triangulate,
)

UNIT = [[0, 0], [1, 0], [1, 1], [0, 1]]


def check_topology(mesh):
    """Structural invariants every valid mesh must satisfy."""
    nloc = sum(len(c) for c in mesh.cells)
    assert nloc == 2 * len(mesh.interior_edges) + len(mesh.boundary_edges)
    # local edge loops close and follow the stored orientation
    for c, ids in enumerate(mesh.cells):
        for k, e in enumerate(mesh.cell_edges[c]):
            a, b = ids[k], ids[(k + 1) % len(ids)]
            v0, v1 = mesh.edges[e]
            if mesh.edge_cells[e, 0] == c:
                assert (v0, v1) == (a, b)
            else:
                assert mesh.edge_cells[e, 1] == c and (v0, v1) == (b, a)
    # left cell has the lower index
    ie = mesh.interior_edges
    assert np.all(mesh.edge_cells[ie, 0] < mesh.edge_cells[ie, 1])
    # outward normals of the two neighbours are exact negations
    for g in mesh.groups:
        geo = g.geometry
        sign = np.where(g.owner, 1.0, -1.0)[..., None]
        np.testing.assert_array_equal(geo.normal * sign, mesh.edge_normal[g.edge_ids])
    # shoelace area equals the sub-triangulation area
    for c in range(mesh.n_cells):
        _, w = quadrature_on_cell(mesh.cell_coords(c), 2)
        assert w.sum() == pytest.approx(mesh.area[c], rel=1e-12)
    assert np.all(mesh.area > 0)


class TestBuildMesh:
    def test_unit_square_cell(self):
        m = build_mesh(UNIT, [[0, 1, 2, 3]])
        assert (m.n_cells, len(m.boundary_edges), len(m.interior_edges)) == (1, 4, 0)
        assert m.area[0] == pytest.approx(1.0)
        assert m.diameter[0] == pytest.approx(np.sqrt(2))
        np.testing.assert_allclose(m.centroid[0], [0.5, 0.5])
        assert np.all(m.edge_cells[:, 1] == BOUNDARY)

    def test_two_by_two_grid_counts(self):
        m = generate_square_grid(2)
        assert (m.n_cells, len(m.interior_edges), len(m.boundary_edges)) == (4, 4, 8)
        check_topology(m)

    def test_clockwise_cell_is_normalized(self):
        ccw = build_mesh(UNIT, [[0, 1, 2, 3]])
        cw = build_mesh(UNIT, [[3, 2, 1, 0]])
        assert signed_area(cw.cell_coords(0)) > 0
        assert cw.area[0] == ccw.area[0]
        np.testing.assert_allclose(cw.centroid, ccw.centroid)
        assert cw.diameter[0] == ccw.diameter[0]

    @pytest.mark.parametrize("cells, msg", [
        ([[0, 1]], "fewer than 3"),
        ([[0, 1, 7]], "out of range"),
        ([[0, 1, 1, 2]], "duplicate"),
        ([[0, 1, 4]], "degenerate"),
        ([[0, 4, 3, 2]], "not a simple"),
    ])
    def test_invalid_cells(self, cells, msg):
        verts = UNIT + [[2, 0]]
        with pytest.raises(MeshError, match=msg):
            build_mesh(verts, cells)

    def test_non_manifold_edge(self):
        verts = [[0, 0], [1, 0], [0.5, 1], [0.5, -1], [1.5, 0.5]]
        # three triangles share the edge (0, 1); the third overlaps the first
        with pytest.raises(MeshError):
            build_mesh(verts, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])

    def test_overlapping_cells_rejected(self):
        verts = [[0, 0], [1, 0], [0.5, 1], [0.5, 0.5]]
        with pytest.raises(MeshError, match="overlap"):
            build_mesh(verts, [[0, 1, 2], [0, 1, 3]])

    def test_non_star_cell_warns(self):
        c_shape = [[0, 0], [3, 0], [3, 1], [1, 1], [1, 2], [3, 2], [3, 3], [0, 3]]
        with pytest.warns(UserWarning, match="star-shaped"):
            m = build_mesh(c_shape, [list(range(8))])
        check_topology(m)
        assert m.quality().star_ratio[0] == 0.0


def test_is_simple_with_collinear_edges():
    # two disjoint edges on x = 3 are collinear but do not touch
    c_shape = np.array([[0, 0], [3, 0], [3, 1], [1, 1], [1, 2], [3, 2], [3, 3], [0, 3]], float)
    assert is_simple(c_shape)
    # a spike folding back along its own line does overlap
    folded = np.array([[0, 0], [2, 0], [1, 0], [1, 1]], float)
    assert not is_simple(folded)


class TestGenerators:
    def test_square_n1_is_unit_cell(self):
        m = generate_square_grid(1)
        assert m.n_cells == 1 and m.area[0] == pytest.approx(1.0)

    def test_square_n4_interior_edges(self):
        # oracle: enumerate unordered vertex pairs shared by two cells
        m = generate_square_grid(4)
        pairs = {}
        for ids in m.cells:
            for k in range(4):
                key = frozenset((int(ids[k]), int(ids[(k + 1) % 4])))
                pairs[key] = pairs.get(key, 0) + 1
        assert m.n_cells == 16
        assert len(m.interior_edges) == sum(v == 2 for v in pairs.values()) == 2 * 4 * 3

    @pytest.mark.parametrize("n", [1, 2, 3, 8])
    def test_square_mesh_size(self, n):
        assert generate_square_grid(n).h == pytest.approx(np.sqrt(2) / n, rel=1e-15)

    def test_tria_counts(self):
        m1 = generate_tria_grid(1)
        assert m1.n_cells == 2 and len(m1.interior_edges) == 1
        m2 = generate_tria_grid(2)
        assert m2.n_cells == 8
        assert all(len(c) == 3 for c in m2.cells)
        assert np.all(m2.area > 0)

    def test_rand_zero_jitter_is_square_grid(self):
        a = generate_rand_grid(5, jitter=0.0)
        b = generate_square_grid(5)
        np.testing.assert_array_equal(a.vertices, b.vertices)
        assert all(np.array_equal(x, y) for x, y in zip(a.cells, b.cells))

    def test_rand_is_deterministic(self):
        a = generate_rand_grid(6, seed=11)
        b = generate_rand_grid(6, seed=11)
        assert a.vertices.tobytes() == b.vertices.tobytes()
        assert not np.array_equal(a.vertices, generate_rand_grid(6, seed=12).vertices)

    def test_rand_jitter_bounds(self):
        n, jit = 8, 0.3
        m = generate_rand_grid(n, jitter=jit, seed=1)
        base = generate_square_grid(n).vertices
        assert np.max(np.abs(m.vertices - base)) <= jit / n
        bnd = np.any((base == 0) | (base == 1), axis=1)
        np.testing.assert_array_equal(m.vertices[bnd], base[bnd])
        check_topology(m)

    def test_rand_rejects_bad_jitter(self):
        with pytest.raises(ValueError):
            generate_rand_grid(4, jitter=0.5)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            generate_family("cvt", 4)

    @settings(max_examples=25, deadline=None)
    @given(family=st.sampled_from(["square", "tria", "rand"]), n=st.integers(1, 9),
           seed=st.integers(0, 2**31 - 1), jitter=st.floats(0.0, 0.45))
    def test_generated_meshes_are_valid(self, family, n, seed, jitter):
        check_topology(generate_family(family, n, jitter=jitter, seed=seed))

    def test_quality_ratios(self):
        q = generate_rand_grid(8, seed=2).quality()
        assert np.all((q.min_edge_ratio > 0) & (q.min_edge_ratio <= 1))
        assert np.all((q.star_ratio > 0) & (q.star_ratio <= 1))
        sq = generate_square_grid(4).quality()
        np.testing.assert_allclose(sq.min_edge_ratio, 1 / np.sqrt(2))
        assert sq.h == pytest.approx(np.sqrt(2) / 4)


class TestFileIO:
    def test_round_trip(self, tmp_path):
        for m in (generate_square_grid(2), generate_rand_grid(5, seed=4)):
            path = tmp_path / "m.poly"
            save_mesh(m, path)
            back = load_mesh(path)
            np.testing.assert_array_equal(back.vertices, m.vertices)
            assert all(np.array_equal(x, y) for x, y in zip(back.cells, m.cells))

    def test_writer_precision(self, tmp_path):
        m = generate_rand_grid(3, seed=0)
        path = tmp_path / "m.poly"
        save_mesh(m, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "polymesh 1"
        x = lines[2 + 5].split()[0]   # an interior vertex
        assert len(x.replace(".", "").replace("-", "").lstrip("0")) >= 17

    def test_two_vertex_cell(self):
        text = "polymesh 1\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n0 1\n"
        with pytest.raises(MeshFormatError, match="cell has fewer than 3 vertices") as exc:
            parse_mesh(text)
        assert exc.value.line == 7

    @pytest.mark.parametrize("text, line", [
        ("mesh 2\n", 1),
        ("polymesh 1\nvertices 2\n0 0\n", 3),
        ("polymesh 1\nvertices 1\n0 zero\ncells 0\n", 3),
        ("polymesh 1\n# comment\nvertices 1\n0 0 0\ncells 0\n", 4),
        ("polymesh 1\nvertices 0\ncells 1\n0 a 2\n", 4),
        ("polymesh 1\nvertices 0\ncells 0\nextra\n", 4),
    ])
    def test_parse_errors_carry_line_numbers(self, text, line):
        with pytest.raises(MeshFormatError) as exc:
            parse_mesh(text)
        assert exc.value.line == line
        assert f"line {line}" in str(exc.value)

    def test_voronoi_fixture_accepted(self, tmp_path):
        # three Voronoi-like cells around seeds (0.2,0.3), (0.75,0.25), (0.5,0.8)
        text = """polymesh 1
# hand-made Voronoi partition of the unit square
vertices 9
0 0
0.5 0
1 0
1 0.55
0.52 0.47
0 0.6
0 1
1 1
0.35 0.5   # unused vertex is allowed
cells 3
0 1 4 5
1 2 3 4
5 4 3 7 6
"""
        path = tmp_path / "vor.poly"
        path.write_text(text)
        m = load_mesh(path)
        assert m.n_cells == 3 and len(m.interior_edges) == 3
        assert m.area.sum() == pytest.approx(1.0)
        check_topology(m)


class TestSubTriangulation:
    def test_unit_square_fan(self):
        tris = sub_triangulate(np.array(UNIT, float))
        assert tris.shape == (4, 3, 2)
        np.testing.assert_allclose(tris[:, 0], 0.5)
        assert signed_area(tris).sum() == pytest.approx(1.0)

    def test_triangle_is_itself(self):
        tri = np.array([[0, 0], [1, 0], [0, 1]], float)
        np.testing.assert_array_equal(sub_triangulate(tri), tri[None])

    def test_random_hexagon_area(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = np.sort(rng.uniform(0, 2 * np.pi, 6))
            r = rng.uniform(0.5, 1.5, 6)
            hexa = np.column_stack([r * np.cos(t), r * np.sin(t)])
            tris = sub_triangulate(hexa)
            assert signed_area(tris).sum() == pytest.approx(signed_area(hexa), rel=1e-12)
            assert np.all(signed_area(tris) > -1e-15)

    def test_ear_clipping_for_non_star_cell(self):
        c_shape = fixture_cells()[6]
        tris = sub_triangulate(c_shape)
        assert len(tris) == len(c_shape) - 2
        assert signed_area(tris).sum() == pytest.approx(signed_area(c_shape), rel=1e-12)


def _poly_mul(p, q):
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out


def _polygon_moment(coords, a, b):
    """Exact int_E x^a y^b by Green's theorem, in rational arithmetic.

    Each edge contributes int_0^1 x(s)^(a+1) / (a+1) y(s)^b y'(s) ds with
    x, y linear in s; the polynomial in s is expanded with Fractions.
    """
    pts = [(Fraction(float(px)), Fraction(float(py))) for px, py in coords]
    total = Fraction(0)
    for k in range(len(pts)):
        (x0, y0), (x1, y1) = pts[k], pts[(k + 1) % len(pts)]
        poly = [Fraction(1)]
        for _ in range(a + 1):
            poly = _poly_mul(poly, [x0, x1 - x0])
        for _ in range(b):
            poly = _poly_mul(poly, [y0, y1 - y0])
        total += (y1 - y0) / (a + 1) * sum(c / (i + 1) for i, c in enumerate(poly))
    return float(total)


class TestQuadrature:
    def test_unit_square_examples(self):
        pts, w = quadrature_on_cell(np.array(UNIT, float), 2)
        assert w.sum() == pytest.approx(1.0)
        val = w @ ((pts[:, 0] - 0.5) ** 2 + (pts[:, 1] - 0.5) ** 2)
        assert val == pytest.approx(1.0 / 6.0, rel=1e-14)

    def test_edge_moment(self):
        pts, w = quadrature_on_edge([0.0, 0.0], [1.0, 0.0], 2)
        assert w @ pts[:, 0] ** 2 == pytest.approx(1.0 / 3.0)
        assert w.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("idx", [0, 5, 7, 6, 13])
    def test_monomials_on_fixture_cells(self, idx):
        coords = fixture_cells()[idx]
        for degree in (0, 3, 6, 10):
            pts, w = quadrature_on_cell(coords, degree)
            for a in range(degree + 1):
                b = degree - a
                exact = _polygon_moment(coords, a, b)
                got = w @ (pts[:, 0] ** a * pts[:, 1] ** b)
                assert got == pytest.approx(exact, rel=1e-12, abs=1e-14)


def test_cell_geometry_batches_match_single():
    m = generate_rand_grid(4, seed=5)
    g = m.groups[0]
    geo = g.geometry
    for i, c in enumerate(g.cell_ids):
        single = CellGeometry(m.cell_coords(c))
        np.testing.assert_allclose(geo.area[i], single.area)
        np.testing.assert_allclose(geo.normal[i], single.normal)
        np.testing.assert_allclose(geo.centroid[i], polygon_centroid(m.cell_coords(c)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        generate_rand_grid(4, seed=5)
