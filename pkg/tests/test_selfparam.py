import time

import numpy as np
import pytest

from nsubdiv import (
    BarycentricPoint,
    DecimationState,
    MapError,
    Mesh,
    collapse_edge_with_param,
    decimate,
    flatten_one_ring,
    init_quadrics,
    load_map,
    quadric_error,
    reflatten_interior,
    save_map,
    shapes,
    triangle_quality,
    validate_collapse,
)
from nsubdiv.mesh import midpoint_connectivity
from nsubdiv.selfparam import UVChart


# ------------------------------------------------------------------ quadrics

def test_quadrics_vanish_on_their_planes():
    cube = shapes.cube()
    q = init_quadrics(cube)
    for v in range(8):
        assert quadric_error(q[v], cube.vertices[v]) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(q, q.transpose(0, 2, 1))


def test_quadrics_positive_semidefinite(icosphere3):
    q = init_quadrics(icosphere3)
    eigenvalues = np.linalg.eigvalsh(q)
    assert eigenvalues.min() > -1e-9


def test_quadric_cube_corner_offset():
    cube = shapes.cube()
    q = init_quadrics(cube)
    delta = 0.37
    probe = cube.vertices[0] + np.array([delta, 0.0, 0.0])
    # oracle: sum area-weighted squared plane distances over incident faces
    expected = 0.0
    for f in cube.vertex_faces(0):
        p = cube.vertices[cube.faces[f]]
        n = np.cross(p[1] - p[0], p[2] - p[0])
        area = 0.5 * np.linalg.norm(n)
        n = n / np.linalg.norm(n)
        expected += area * (n @ (probe - p[0])) ** 2
    assert quadric_error(q[0], probe) == pytest.approx(expected, rel=1e-12)


def test_quadric_planar_patch_interior():
    # interior vertex of a flat region: all incident planes coincide, so the
    # quadric vanishes on any in-plane point
    from nsubdiv.classic import midpoint_subdivide
    grid = midpoint_subdivide(shapes.cube(), 2)
    q = init_quadrics(grid)
    interior = [
        v for v in range(grid.n_vertices)
        if grid.vertices[v][2] == -1.0
        and np.abs(grid.vertices[v][:2]).max() < 0.99
    ]
    assert interior
    v = interior[0]
    probe = grid.vertices[v] + np.array([0.1, -0.2, 0.0])
    assert quadric_error(q[v], probe) == pytest.approx(0.0, abs=1e-12)


# ------------------------------------------------------------ validity checks

def test_validate_collapse_tetrahedron_link(tetrahedron):
    mid = 0.5 * (tetrahedron.vertices[0] + tetrahedron.vertices[1])
    ok, reason = validate_collapse(tetrahedron, (0, 1), mid)
    assert not ok
    assert reason == "link condition"


def test_validate_collapse_normal_flip(octahedron):
    # pulling the surviving vertex through the surface inverts neighbor
    # normals; the link condition passes on the octahedron so the normal
    # test is the first to fail
    bad = -(octahedron.vertices[0] + octahedron.vertices[2])
    ok, reason = validate_collapse(octahedron, (0, 2), bad)
    assert not ok
    assert reason == "normal flip"


def test_validate_collapse_accepts_good_edge(icosphere3):
    state = DecimationState(icosphere3)
    e = min(map(tuple, icosphere3.edges), key=lambda e: np.linalg.norm(
        icosphere3.vertices[e[0]] - icosphere3.vertices[e[1]]))
    pos, _ = state.candidate(*e)
    ok, reason = validate_collapse(icosphere3, e, pos)
    assert ok, reason


# ---------------------------------------------------------------- flattening

def test_flatten_planar_fan_is_isometric():
    from nsubdiv.classic import midpoint_subdivide
    grid = midpoint_subdivide(shapes.cube(), 2)
    z = grid.vertices[:, 2]
    inner = (z == -1.0) & (np.abs(grid.vertices[:, :2]).max(axis=1) < 0.75)
    edge = None
    for a, b in grid.edges:
        if inner[a] and inner[b]:
            nbh, _ = grid.edge_neighborhood(int(a), int(b))
            if all(z[n] == -1.0 for n in nbh):
                edge = (int(a), int(b))
                break
    assert edge is not None
    chart = flatten_one_ring(grid, edge)
    assert np.all(chart.signed_areas() > 0.0)
    # conformal energy of a planar fan is zero: the chart is congruent to
    # the 3D layout, so all pairwise distances agree
    p3 = grid.vertices[chart.vertex_ids]
    for i in range(len(p3)):
        d3 = np.linalg.norm(p3 - p3[i], axis=1)
        d2 = np.linalg.norm(chart.uv - chart.uv[i], axis=1)
        assert np.abs(d3 - d2).max() < 1e-9


def test_flatten_mirror_symmetric_fan(octahedron):
    # the fan of edge (0, 4) is symmetric under y -> -y, which exchanges
    # vertices 2 and 3 and fixes 0, 1, 4, 5
    chart = flatten_one_ring(octahedron, (0, 4))
    uv = {int(v): chart.uv[i] for i, v in enumerate(chart.vertex_ids)}
    assert uv[0] == pytest.approx([0.0, 0.0])
    assert uv[4][1] == pytest.approx(0.0, abs=1e-12)
    assert uv[2][0] == pytest.approx(uv[3][0], abs=1e-9)
    assert uv[2][1] == pytest.approx(-uv[3][1], abs=1e-9)
    assert abs(uv[1][1]) < 1e-9
    assert abs(uv[5][1]) < 1e-9


def test_flatten_requires_edge(octahedron):
    with pytest.raises(Exception):
        flatten_one_ring(octahedron, (0, 1))


def test_flatten_rejects_non_disk_fan(tetrahedron):
    # the combined one-ring of a tetrahedron edge is the whole closed
    # surface, not a disk
    from nsubdiv import FlattenError
    with pytest.raises(FlattenError, match="disk"):
        flatten_one_ring(tetrahedron, (0, 1))


def _fan_chart(mesh, center, ring_uv):
    """Chart over the fan of ``center`` with prescribed boundary layout."""
    fan = mesh.vertex_faces(center)
    triples = mesh.faces[fan]
    vertex_ids = np.unique(triples)
    local = {int(v): i for i, v in enumerate(vertex_ids)}
    tris = np.vectorize(local.__getitem__)(triples)
    uv = np.zeros((len(vertex_ids), 2))
    for v, xy in ring_uv.items():
        uv[local[v]] = xy
    return UVChart(vertex_ids, uv, fan, tris, "pre")


def test_reflatten_square_fan_center(octahedron):
    ring_uv = {0: [1.0, 0.0], 2: [0.0, 1.0], 1: [-1.0, 0.0], 3: [0.0, -1.0]}
    chart = _fan_chart(octahedron, 4, ring_uv)
    out = reflatten_interior(chart, octahedron, 4)
    i = out.local_index(4)
    assert np.abs(out.uv[i]).max() < 1e-12
    assert np.all(out.signed_areas() > 0.0)


def _hex_bipyramid(apex_height=0.8):
    ring = [
        [np.cos(2 * np.pi * k / 6), np.sin(2 * np.pi * k / 6), 0.0] for k in range(6)
    ]
    v = np.array([[0.0, 0.0, apex_height]] + ring + [[0.0, 0.0, -apex_height]])
    faces = []
    for k in range(6):
        a, b = 1 + k, 1 + (k + 1) % 6
        faces.append([0, a, b])
        faces.append([7, b, a])
    return Mesh(v, np.array(faces))


def test_reflatten_hexagon_fan_centroid():
    mesh = _hex_bipyramid()
    ring_uv = {
        1 + k: [np.cos(2 * np.pi * k / 6), np.sin(2 * np.pi * k / 6)] for k in range(6)
    }
    chart = _fan_chart(mesh, 0, ring_uv)
    out = reflatten_interior(chart, mesh, 0)
    assert np.abs(out.uv[out.local_index(0)]).max() < 1e-12


def test_reflatten_sensitivity_is_linear():
    mesh = _hex_bipyramid()
    base = {
        1 + k: np.array([np.cos(2 * np.pi * k / 6), np.sin(2 * np.pi * k / 6)])
        for k in range(6)
    }

    def solve(du):
        ring = dict(base)
        ring[2] = ring[2] + np.array([du, 0.0])
        chart = _fan_chart(mesh, 0, ring)
        out = reflatten_interior(chart, mesh, 0)
        return out.uv[out.local_index(0)]

    h = 1e-3
    d_small = (solve(h) - solve(-h)) / (2 * h)
    d_large = (solve(4 * h) - solve(-4 * h)) / (8 * h)
    assert np.abs(d_small - d_large).max() < 1e-6
    assert np.linalg.norm(d_small) > 1e-3  # the interior vertex does move


# ------------------------------------------------------------------ collapse

def test_collapse_planar_edge_stays_in_plane():
    from nsubdiv.classic import midpoint_subdivide
    grid = midpoint_subdivide(shapes.cube(), 2)
    z = grid.vertices[:, 2]
    inner = (z == -1.0) & (np.abs(grid.vertices[:, :2]).max(axis=1) < 0.75)
    edge = next(
        (int(a), int(b)) for a, b in grid.edges if inner[a] and inner[b]
    )
    state = DecimationState(grid)
    n_v, n_f = state.n_alive, int(state.face_alive.sum())
    record = collapse_edge_with_param(state, edge)
    assert state.n_alive == n_v - 1
    assert int(state.face_alive.sum()) == n_f - 2
    assert record.position[2] == pytest.approx(-1.0, abs=1e-9)
    # identical boundary coordinates between the two charts
    pre, post = record.chart_pre, record.chart_post
    for vid in post.vertex_ids:
        if vid == record.i:
            continue
        assert np.array_equal(
            pre.uv[pre.local_index(vid)], post.uv[post.local_index(vid)]
        )
    # the charts tile the same region
    assert abs(pre.area_total() - post.area_total()) < 1e-8 * abs(pre.area_total())


def test_collapse_rejects_invalid(tetrahedron):
    from nsubdiv.selfparam import CollapseRejected
    state = DecimationState(tetrahedron)
    with pytest.raises(CollapseRejected):
        collapse_edge_with_param(state, (0, 1))


# ----------------------------------------------------------------- decimate

def test_decimate_identity(icosahedron):
    result = decimate(icosahedron, icosahedron.n_vertices)
    assert result.n_collapses == 0
    assert result.reached_target
    assert np.array_equal(result.coarse.vertices, icosahedron.vertices)
    p = BarycentricPoint(3, np.array([0.2, 0.3, 0.5]))
    q, pos = result.bijective_map.map_point(p)
    assert q.face == 3
    assert np.allclose(q.coords, p.coords)
    assert np.allclose(pos, p.position(icosahedron))


@pytest.mark.parametrize("policy", ["qslim", "random100"])
def test_decimate_icosphere(policy, icosphere3):
    result = decimate(icosphere3, 200, policy=policy, seed=11)
    coarse = result.coarse
    assert result.reached_target
    assert coarse.n_vertices == 200
    assert coarse.euler_characteristic == 2
    p = coarse.vertices[coarse.faces]
    q = triangle_quality(p[:, 0], p[:, 1], p[:, 2])
    assert q.min() > 0.2


def test_decimate_best_effort_flag():
    # an icosphere cannot be collapsed all the way to a tetrahedron: the
    # validity criteria run out of edges first and the result is flagged
    result = decimate(shapes.icosphere(1), 4, policy="qslim", seed=0)
    assert not result.reached_target
    assert result.coarse.n_vertices > 4
    assert result.coarse.euler_characteristic == 2


def test_decimate_determinism(icosphere3):
    from nsubdiv.mesh import mesh_digest
    a = decimate(icosphere3, 150, policy="random100", seed=9)
    b = decimate(icosphere3, 150, policy="random100", seed=9)
    assert mesh_digest(a.coarse) == mesh_digest(b.coarse)
    c = decimate(icosphere3, 150, policy="random100", seed=10)
    assert mesh_digest(a.coarse) != mesh_digest(c.coarse)


def test_decimate_complexity_scaling():
    # doubling the input size should cost clearly less than ~2.5x time
    small = shapes.torus(22, 15)
    large = shapes.torus(31, 21)

    def measure(mesh):
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            decimate(mesh, mesh.n_vertices // 5, policy="random100", seed=0)
            best = min(best, time.perf_counter() - t0)
        return best

    t_small = measure(small)
    t_large = measure(large)
    assert t_large / t_small < 2.5


# ---------------------------------------------------------------- map replay

@pytest.fixture(scope="module")
def decimated_sphere(icosphere3):
    return decimate(icosphere3, 128, policy="random100", seed=7)


def test_map_round_trip_per_record(decimated_sphere):
    rng = np.random.default_rng(1)
    worst = 0.0
    for rec in decimated_sphere.bijective_map.records:
        post, pre = rec.chart_post, rec.chart_pre
        rows = np.repeat(np.arange(len(post.faces)), 4)
        w = rng.dirichlet([1.0, 1.0, 1.0], size=len(rows))
        uv = post.uv_of(rows, w)
        best, bary, _ = pre.locate(uv)
        bary = np.maximum(bary, -1e-10)
        bary /= bary.sum(axis=1, keepdims=True)
        back_best, back_bary, _ = post.locate(pre.uv_of(best, bary))
        back_bary = np.maximum(back_bary, -1e-10)
        back_bary /= back_bary.sum(axis=1, keepdims=True)
        uv_back = post.uv_of(back_best, back_bary)
        worst = max(worst, float(np.abs(uv_back - uv).max()))
    assert worst < 1e-8


def test_map_chart_invariants(decimated_sphere):
    two_pi = 2.0 * np.pi
    for rec in decimated_sphere.bijective_map.records:
        for chart, interior in ((rec.chart_pre, (rec.j, rec.k)),
                                (rec.chart_post, (rec.i,))):
            assert np.all(chart.signed_areas() > 0.0)
            for v in interior:
                assert abs(chart.angle_sum(chart.local_index(v)) - two_pi) < 1e-7
        assert abs(rec.chart_pre.area_total() - rec.chart_post.area_total()) \
            < 1e-8 * rec.chart_pre.area_total()


def test_map_surjectivity(decimated_sphere, icosphere3):
    m = decimated_sphere.bijective_map
    k = 9  # (k+1)(k+2)/2 = 55 lattice points per coarse triangle
    lattice = np.array(
        [[(k - i - j) / k, i / k, j / k] for i in range(k + 1) for j in range(k + 1 - i)]
    )
    faces = np.repeat(np.arange(m.coarse.n_faces), len(lattice))
    coords = np.tile(lattice, (m.coarse.n_faces, 1))
    ff, _, _ = m.map_points(faces, coords)
    hit = np.zeros(icosphere3.n_faces, dtype=bool)
    hit[ff] = True
    assert hit.all()


def test_map_injectivity_scan(decimated_sphere):
    m = decimated_sphere.bijective_map
    rng = np.random.default_rng(4)
    n = 10000
    faces = rng.integers(0, m.coarse.n_faces, size=n)
    coords = rng.dirichlet([1.0, 1.0, 1.0], size=n)
    ff, cc, pos = m.map_points(faces, coords)
    # all images are valid barycentric points on the fine mesh
    assert cc.min() >= -1e-10
    assert np.abs(cc.sum(axis=1) - 1.0).max() < 1e-9
    # distinct inputs map to distinct surface points
    assert len(np.unique(pos, axis=0)) == n


def test_map_fixed_vertices(decimated_sphere, icosphere3):
    m = decimated_sphere.bijective_map
    relocated = set(rec.i for rec in m.records)
    fixed = [cv for cv, s in enumerate(m.coarse_vertex_ids) if s not in relocated]
    assert fixed
    for cv in fixed:
        stable = int(m.coarse_vertex_ids[cv])
        f = int(m.coarse.vertex_faces(cv)[0])
        coords = np.zeros(3)
        coords[np.nonzero(m.coarse.faces[f] == cv)[0][0]] = 1.0
        bp, pos = m.map_point(BarycentricPoint(f, coords))
        assert stable in icosphere3.faces[bp.face]
        assert np.abs(pos - icosphere3.vertices[stable]).max() < 1e-12


def test_map_replay_connectivity(decimated_sphere):
    m = decimated_sphere.bijective_map
    assert np.array_equal(m.replay_connectivity(), m.coarse.faces)


def test_map_composition_is_sequential(decimated_sphere):
    # mapping through the full composition must process every record once:
    # splitting the record sequence in half and replaying the halves
    # sequentially gives the same result
    m = decimated_sphere.bijective_map
    from nsubdiv.selfparam import BijectiveMap
    half = len(m.records) // 2
    rng = np.random.default_rng(8)
    n = 500
    faces = rng.integers(0, m.coarse.n_faces, size=n)
    coords = rng.dirichlet([1.0, 1.0, 1.0], size=n)
    full_f, full_c, _ = m.map_points(faces, coords)

    stable_faces = m.coarse_face_ids[faces]
    late = BijectiveMap(m.fine, m.coarse, m.records[half:],
                        np.arange(m.fine.n_vertices), np.arange(m.fine.n_faces))
    early = BijectiveMap(m.fine, m.coarse, m.records[:half],
                         np.arange(m.fine.n_vertices), np.arange(m.fine.n_faces))
    f1, c1, _ = late.map_points(stable_faces, coords)
    f2, c2, _ = early.map_points(f1, c1)
    assert np.array_equal(f2, full_f)
    assert np.abs(c2 - full_c).max() < 1e-12


def test_nsm_round_trip(tmp_path, decimated_sphere, icosphere3):
    m = decimated_sphere.bijective_map
    path = tmp_path / "map.nsm"
    save_map(m, str(path))
    loaded = load_map(str(path), icosphere3, decimated_sphere.coarse)
    assert len(loaded.records) == len(m.records)
    rng = np.random.default_rng(2)
    faces = rng.integers(0, m.coarse.n_faces, size=200)
    coords = rng.dirichlet([1.0, 1.0, 1.0], size=200)
    f1, c1, p1 = m.map_points(faces, coords)
    f2, c2, p2 = loaded.map_points(faces, coords)
    assert np.array_equal(f1, f2)
    assert np.array_equal(c1, c2)
    assert np.array_equal(p1, p2)


def test_nsm_hash_mismatch(tmp_path, decimated_sphere, icosphere3):
    path = tmp_path / "map.nsm"
    save_map(decimated_sphere.bijective_map, str(path))
    other = shapes.icosphere(2)
    with pytest.raises(MapError, match="hash"):
        load_map(str(path), other, decimated_sphere.coarse)
