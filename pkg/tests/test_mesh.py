import numpy as np
import pytest

from nsubdiv import (
    BarycentricPoint,
    Mesh,
    MeshError,
    check_link_condition,
    load_obj,
    mesh_digest,
    midpoint_topology_subdivide,
    normalize_unit_box,
    save_obj,
    shapes,
    triangle_quality,
)
from conftest import neighbor_sets_from_faces, random_rotation

TET_OBJ = """v 1 1 1
v 1 -1 -1
v -1 1 -1
v -1 -1 1
f 1 2 3
f 1 4 2
f 1 3 4
f 2 4 3
"""


def test_load_obj_tetrahedron(tmp_path):
    path = tmp_path / "tet.obj"
    path.write_text(TET_OBJ)
    mesh = load_obj(str(path))
    assert mesh.n_vertices == 4
    assert mesh.n_faces == 4
    assert mesh.n_edges == 6
    assert mesh.euler_characteristic == 2


def test_load_obj_rejects_quads(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshError, match="5"):
        load_obj(str(path))


def test_load_obj_rejects_boundary(tmp_path):
    path = tmp_path / "open.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 3 2 4\n")
    with pytest.raises(MeshError, match="boundary edge"):
        load_obj(str(path))


def test_load_obj_rejects_nonmanifold_edge(tmp_path):
    path = tmp_path / "fan3.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nv 0 -1 0\n"
        "f 1 2 3\nf 1 2 4\nf 1 2 5\n"
    )
    with pytest.raises(MeshError):
        load_obj(str(path))


def test_load_obj_ignores_texture_and_normals(tmp_path):
    path = tmp_path / "tex.obj"
    lines = TET_OBJ.splitlines()
    body = lines[:4] + ["vt 0 0", "vn 0 0 1"] + [
        l.replace(" 1", " 1/1/1").replace(" 2", " 2/1/1")
        .replace(" 3", " 3/1/1").replace(" 4", " 4/1/1")
        for l in lines[4:]
    ]
    path.write_text("\n".join(body) + "\n")
    mesh = load_obj(str(path))
    assert mesh.n_faces == 4


def test_obj_round_trip_bit_exact(tmp_path, icosphere3):
    mesh = Mesh(icosphere3.vertices * np.pi / 3.0, icosphere3.faces)
    path = tmp_path / "m.obj"
    save_obj(mesh, str(path))
    back = load_obj(str(path))
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)
    # idempotent: second round trip produces identical bytes
    path2 = tmp_path / "m2.obj"
    save_obj(back, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_save_obj_bad_path(tetrahedron):
    with pytest.raises(OSError):
        save_obj(tetrahedron, "")


def test_mesh_rejects_unreferenced_vertex():
    v = np.vstack([shapes.tetrahedron().vertices, [5.0, 5.0, 5.0]])
    with pytest.raises(MeshError, match="unreferenced"):
        Mesh(v, shapes.tetrahedron().faces)


def test_mesh_rejects_bowtie_vertex():
    # two tetrahedra glued at a single vertex: every edge is manifold but
    # the shared vertex link is two disjoint cycles
    t = shapes.tetrahedron()
    v = np.vstack([t.vertices, t.vertices[1:] + 5.0])
    f2 = np.array([[0, 5, 4], [0, 6, 5], [0, 4, 6], [4, 5, 6]])
    with pytest.raises(MeshError, match="non-manifold vertex"):
        Mesh(v, np.vstack([t.faces, f2]))


def test_one_ring_valences(tetrahedron, octahedron, icosahedron):
    assert all(len(icosahedron.one_ring(v)) == 5 for v in range(12))
    assert all(len(tetrahedron.one_ring(v)) == 3 for v in range(4))
    assert all(len(octahedron.one_ring(v)) == 4 for v in range(6))


def test_one_ring_starts_at_lowest_and_is_cyclic(icosphere3):
    mesh = icosphere3
    for v in range(0, mesh.n_vertices, 17):
        ring = mesh.one_ring(v)
        assert ring[0] == ring.min()
        # consecutive ring members share a face with the center vertex
        for i in range(len(ring)):
            a, b = int(ring[i]), int(ring[(i + 1) % len(ring)])
            shared = [
                f for f in mesh.vertex_faces(v)
                if a in mesh.faces[f] and b in mesh.faces[f]
            ]
            assert len(shared) == 1


def test_edge_neighborhood_octahedron(octahedron):
    nbrs = neighbor_sets_from_faces(octahedron.faces, 6)
    expected = sorted((nbrs[0] | nbrs[2]) - {0, 2})
    got, fan = octahedron.edge_neighborhood(0, 2)
    assert list(got) == expected
    assert len(got) == 4
    fan_expected = sorted(
        f for f in range(octahedron.n_faces)
        if 0 in octahedron.faces[f] or 2 in octahedron.faces[f]
    )
    assert list(fan) == fan_expected


def test_edge_neighborhood_sizes(tetrahedron, icosahedron):
    got, _ = tetrahedron.edge_neighborhood(0, 1)
    assert len(got) == 2
    # icosahedron: both one-rings have 5 members and include the opposite
    # endpoint; the union shares 2 vertices, so after excluding the
    # endpoints themselves 10 - 2 - 2 = 6 remain
    e = icosahedron.edges[0]
    got, _ = icosahedron.edge_neighborhood(int(e[0]), int(e[1]))
    nbrs = neighbor_sets_from_faces(icosahedron.faces, 12)
    assert list(got) == sorted((nbrs[e[0]] | nbrs[e[1]]) - {int(e[0]), int(e[1])})
    assert len(got) == 6


def test_edge_neighborhood_requires_edge(octahedron):
    with pytest.raises(MeshError):
        octahedron.edge_neighborhood(0, 1)  # antipodal, not an edge


def test_differential_coordinates(octahedron):
    d = octahedron.differential_coordinates()
    # neighbors of the +z apex are the four equatorial vertices, mean (0,0,0)
    assert np.allclose(d[4], [0.0, 0.0, 1.0])
    # a vertex at the centroid of its ring has zero differential coordinates
    v = np.array(octahedron.vertices)
    v[4] = v[[0, 1, 2, 3]].mean(axis=0)
    flat = Mesh(v, octahedron.faces)
    assert np.allclose(flat.differential_coordinates()[4], 0.0, atol=1e-15)


def test_differential_coordinates_equivariance(icosphere3):
    rng = np.random.default_rng(0)
    r = random_rotation(rng)
    t = rng.normal(size=3)
    d0 = icosphere3.differential_coordinates()
    moved = Mesh(icosphere3.vertices @ r.T + t, icosphere3.faces)
    assert np.abs(moved.differential_coordinates() - d0 @ r.T).max() < 1e-12


def test_triangle_quality_values():
    eq = triangle_quality([0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0])
    assert eq == pytest.approx(1.0, abs=1e-12)
    assert triangle_quality([0, 0, 0], [1, 0, 0], [2, 0, 0]) == 0.0
    # right isoceles, legs 1: area 1/2, squared edges 1 + 1 + 2
    expected = 4 * np.sqrt(3) * 0.5 / 4.0
    assert triangle_quality([0, 0, 0], [1, 0, 0], [0, 1, 0]) == pytest.approx(expected)
    assert expected == pytest.approx(np.sqrt(3) / 2)


def test_triangle_quality_invariance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b, c = rng.normal(size=(3, 3))
        q0 = triangle_quality(a, b, c)
        r = random_rotation(rng)
        s = float(np.exp(rng.normal()))
        t = rng.normal(size=3)
        q1 = triangle_quality(s * a @ r.T + t, s * b @ r.T + t, s * c @ r.T + t)
        assert abs(q1 - q0) < 1e-12


def test_link_condition(tetrahedron, octahedron, icosahedron):
    # oracle: ring intersections computed straight from the face lists
    def oracle(mesh, j, k):
        nbrs = neighbor_sets_from_faces(mesh.faces, mesh.n_vertices)
        common = nbrs[j] & nbrs[k]
        if len(common) != 2:
            return False
        a, b = common
        return a not in nbrs[b]

    assert check_link_condition(tetrahedron, 0, 1) is oracle(tetrahedron, 0, 1) is False
    assert check_link_condition(octahedron, 0, 2) is oracle(octahedron, 0, 2) is True
    e = icosahedron.edges[3]
    assert check_link_condition(icosahedron, int(e[0]), int(e[1])) is True


def test_midpoint_subdivide_counts(tetrahedron, icosahedron):
    sub, _ = midpoint_topology_subdivide(icosahedron)
    assert (sub.n_vertices, sub.n_faces) == (42, 80)
    sub_t, _ = midpoint_topology_subdivide(tetrahedron)
    assert (sub_t.n_vertices, sub_t.n_faces) == (10, 16)
    sub2, _ = midpoint_topology_subdivide(sub_t)
    assert (sub2.n_vertices, sub2.n_faces) == (34, 64)


def test_midpoint_subdivide_preserves_euler(icosahedron):
    torus = shapes.torus(10, 8)
    for mesh in (icosahedron, torus):
        sub, _ = midpoint_topology_subdivide(mesh)
        assert sub.euler_characteristic == mesh.euler_characteristic


def test_midpoint_parent_records(octahedron):
    sub, parents = midpoint_topology_subdivide(octahedron)
    assert len(parents.points) == sub.n_vertices
    # even vertices: a corner of an incident face, exactly at the vertex
    for v in range(octahedron.n_vertices):
        p = parents.points[v]
        assert v in octahedron.faces[p.face]
        assert np.allclose(p.position(octahedron), octahedron.vertices[v])
    # odd vertices: (1/2, 1/2, 0) weights on the lower incident face
    for r, (a, b) in enumerate(parents.odd_edges):
        p = parents.points[octahedron.n_vertices + r]
        tri = octahedron.faces[p.face]
        assert a in tri and b in tri
        assert sorted(p.coords) == pytest.approx([0.0, 0.5, 0.5])
        mid = 0.5 * (octahedron.vertices[a] + octahedron.vertices[b])
        assert np.allclose(p.position(octahedron), mid)
        assert np.allclose(sub.vertices[octahedron.n_vertices + r], mid)
    # odd ordering follows the sorted undirected edge list
    assert np.array_equal(parents.odd_edges, octahedron.edges)


def test_normalize_unit_box():
    cube = shapes.icosphere(1)
    scaled = Mesh(cube.vertices * 10.0 + 3.0, cube.faces)
    norm1, t1 = normalize_unit_box(cube)
    norm10, t10 = normalize_unit_box(scaled)
    assert norm1.bbox_diagonal() == pytest.approx(1.0, abs=1e-12)
    assert np.abs(norm1.vertices - norm10.vertices).max() < 1e-12
    # transform inverts
    assert np.abs(t1.invert(norm1.vertices) - cube.vertices).max() < 1e-12
    again, t_again = normalize_unit_box(norm1)
    assert t_again.scale == pytest.approx(1.0)
    assert np.abs(t_again.center).max() < 1e-12


def test_barycentric_point_clamps():
    p = BarycentricPoint(0, np.array([0.5, 0.5, -1e-12]))
    assert p.coords.min() >= -1e-10
    assert p.coords.sum() == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        BarycentricPoint(0, np.array([-1.0, 0.0, 0.0]))


def test_mesh_digest_distinguishes(octahedron, tetrahedron):
    assert mesh_digest(octahedron) != mesh_digest(tetrahedron)
    assert mesh_digest(octahedron) == mesh_digest(
        Mesh(octahedron.vertices, octahedron.faces)
    )
