"""Indexed triangle mesh with half-edge adjacency.

The mesh is the geometric substrate for everything else in this package:
decimation, subdivision, the learned refinement modules and the distance
metrics.  Only closed, orientable 2-manifolds are accepted; boundaries and
non-manifold configurations are rejected at construction time with a
diagnostic naming the offending edge or vertex.

Meshes are immutable after construction.  All queries are read-only, so a
mesh can be shared freely between threads; refinement and decimation
produce fresh ``Mesh`` values.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

EPS_BARY = 1e-10


class MeshError(ValueError):
    """Raised for malformed input files or non-manifold/boundary topology."""


@dataclass(frozen=True)
class BarycentricPoint:
    """A surface point: a face index plus convex weights over its corners.

    Weights are clamped to ``>= -EPS_BARY`` and renormalized to sum to one
    on construction, so values straight out of linear solves are accepted.
    """

    face: int
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.shape != (3,):
            raise ValueError("barycentric coords must be a 3-vector")
        c = np.maximum(c, -EPS_BARY)
        s = c.sum()
        if not np.isfinite(s) or s <= 0.0:
            raise ValueError("barycentric coords must have a positive sum")
        if abs(s - 1.0) > EPS_BARY:
            c = c / s
        object.__setattr__(self, "face", int(self.face))
        object.__setattr__(self, "coords", c)

    def position(self, mesh):
        """3D location of this point on ``mesh``."""
        return self.coords @ mesh.vertices[mesh.faces[self.face]]


@dataclass(frozen=True)
class HalfFlap:
    """A directed edge with its two incident triangles and a local frame.

    ``frame`` rows are the x, y, z axes of a right-handed orthonormal
    basis whose x-axis is the normalized source-to-dest direction;
    ``origin`` is the source position.
    """

    source: int
    dest: int
    left_opp: int
    right_opp: int
    frame: np.ndarray
    origin: np.ndarray

    def to_local(self, vectors):
        """Express global direction vectors in the flap frame."""
        return np.asarray(vectors) @ self.frame.T

    def to_global(self, vectors):
        """Express frame-local direction vectors in global coordinates."""
        return np.asarray(vectors) @ self.frame


@dataclass(frozen=True)
class SimilarityTransform:
    """Uniform scale about the origin composed with a translation.

    ``apply`` maps original coordinates ``x`` to ``(x - center) * scale``.
    """

    scale: float
    center: np.ndarray

    def apply(self, points):
        return (np.asarray(points, dtype=float) - self.center) * self.scale

    def invert(self, points):
        return np.asarray(points, dtype=float) / self.scale + self.center

    @property
    def is_identity(self):
        return self.scale == 1.0 and not np.any(self.center)


def _halfedge_tables(faces, n_vertices):
    """Build twin pointers for the directed edges of a face array.

    Half-edge ``h = 3 * f + c`` runs from ``faces[f, c]`` to
    ``faces[f, (c + 1) % 3]``.  Raises ``MeshError`` on duplicated directed
    edges (non-manifold or inconsistently oriented) and on boundary edges.
    """
    src = faces.ravel()
    dst = faces[:, [1, 2, 0]].ravel()
    key = src.astype(np.int64) * n_vertices + dst
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    dup = np.nonzero(sorted_key[1:] == sorted_key[:-1])[0]
    if dup.size:
        h = order[dup[0]]
        raise MeshError(
            "non-manifold or inconsistently oriented edge (%d, %d): directed "
            "edge appears in more than one face" % (src[h], dst[h])
        )
    rkey = dst.astype(np.int64) * n_vertices + src
    pos = np.searchsorted(sorted_key, rkey)
    pos_clipped = np.minimum(pos, len(sorted_key) - 1)
    found = sorted_key[pos_clipped] == rkey
    if not np.all(found):
        h = int(np.nonzero(~found)[0][0])
        raise MeshError(
            "boundary edge (%d, %d): undirected edge has only one incident face"
            % (src[h], dst[h])
        )
    twin = order[pos_clipped]
    return src, dst, twin


class Mesh:
    """Immutable indexed triangle mesh (closed orientable 2-manifold).

    Parameters
    ----------
    vertices : (V, 3) array_like of float
        Vertex positions.
    faces : (F, 3) array_like of int
        Counter-clockwise vertex index triples.

    Notes
    -----
    Construction validates that every face is a triple of distinct in-range
    indices, that every undirected edge has exactly two incident faces with
    opposite half-edge orientations, that every vertex is referenced, and
    that the faces around each vertex form a single cycle.
    """

    def __init__(self, vertices, faces):
        v = np.array(vertices, dtype=np.float64)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must be an (V, 3) array")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("faces must be an (F, 3) array")
        if f.size == 0 or v.size == 0:
            raise MeshError("mesh must have at least one face and one vertex")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError("face index out of range")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
        if np.any(degen):
            raise MeshError("face %d repeats a vertex index" % int(np.nonzero(degen)[0][0]))
        referenced = np.zeros(len(v), dtype=bool)
        referenced[f.ravel()] = True
        if not referenced.all():
            raise MeshError("unreferenced vertex %d" % int(np.nonzero(~referenced)[0][0]))

        self.vertices = v
        self.faces = f
        src, dst, twin = _halfedge_tables(f, len(v))
        self.halfedge_src = src
        self.halfedge_dst = dst
        self.twin = twin

        n_half = len(src)
        v2h = np.full(len(v), n_half, dtype=np.int64)
        np.minimum.at(v2h, src, np.arange(n_half))
        self.v2h = v2h

        # undirected edges, sorted lexicographically by (min, max) index
        lo = np.minimum(src, dst)
        hi = np.maximum(src, dst)
        ekey = lo * len(v) + hi
        uniq, inverse = np.unique(ekey, return_inverse=True)
        self.edges = np.column_stack([uniq // len(v), uniq % len(v)])
        self.halfedge_edge = inverse

        self._check_vertex_manifold()
        for a in (self.vertices, self.faces, self.halfedge_src, self.halfedge_dst,
                  self.twin, self.v2h, self.edges, self.halfedge_edge):
            a.setflags(write=False)
        self._cache = {}

    # ---------------------------------------------------------------- basics

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    def next_halfedge(self, h):
        return h - h % 3 + (h + 1) % 3

    def prev_halfedge(self, h):
        return h - h % 3 + (h + 2) % 3

    def halfedge_face(self, h):
        return h // 3

    def halfedge_between(self, j, k):
        """Half-edge index running j -> k, or None if (j, k) is not an edge."""
        h = int(self.v2h[j])
        start = h
        while True:
            if int(self.halfedge_dst[h]) == k:
                return h
            h = int(self.twin[self.prev_halfedge(h)])
            if h == start:
                return None

    def _check_vertex_manifold(self):
        prev = np.arange(len(self.halfedge_src))
        prev = prev - prev % 3 + (prev + 2) % 3
        step = self.twin[prev]  # CCW rotation of outgoing half-edges
        valence = np.bincount(self.halfedge_src, minlength=self.n_vertices)
        cur = step[self.v2h]
        length = np.ones(self.n_vertices, dtype=np.int64)
        active = cur != self.v2h
        for _ in range(int(valence.max())):
            if not active.any():
                break
            length[active] += 1
            cur = np.where(active, step[cur], cur)
            active = active & (cur != self.v2h)
        if active.any() or np.any(length != valence):
            bad = int(np.nonzero(length != valence)[0][0])
            raise MeshError("non-manifold vertex %d: link is not a single cycle" % bad)

    # ------------------------------------------------------------ adjacency

    def one_ring(self, v):
        """Neighbor vertex indices of ``v`` in counter-clockwise order.

        The cycle is rotated to start at the lowest-index neighbor; its
        length equals the valence of ``v``.
        """
        h = int(self.v2h[v])
        start = h
        ring = []
        while True:
            ring.append(int(self.halfedge_dst[h]))
            h = int(self.twin[self.prev_halfedge(h)])
            if h == start:
                break
        k = int(np.argmin(ring))
        return np.array(ring[k:] + ring[:k], dtype=np.int64)

    def one_ring_halfedges(self, v):
        """Outgoing half-edges of ``v`` in counter-clockwise order."""
        h = int(self.v2h[v])
        start = h
        out = []
        while True:
            out.append(h)
            h = int(self.twin[self.prev_halfedge(h)])
            if h == start:
                break
        return np.array(out, dtype=np.int64)

    def vertex_faces(self, v):
        """Face indices incident to ``v``, in ascending order."""
        return np.sort(self.one_ring_halfedges(v) // 3)

    def edge_neighborhood(self, j, k):
        """Combined neighborhood of edge ``(j, k)``.

        Returns ``(vertices, fan)`` where ``vertices`` is the sorted union
        of the two endpoint one-rings excluding ``j`` and ``k`` themselves,
        and ``fan`` is the sorted list of all faces incident to ``j`` or
        ``k``.
        """
        if self.halfedge_between(j, k) is None:
            raise MeshError("(%d, %d) is not an edge" % (j, k))
        ring = set(self.one_ring(j).tolist()) | set(self.one_ring(k).tolist())
        ring -= {int(j), int(k)}
        fan = np.unique(np.concatenate([self.vertex_faces(j), self.vertex_faces(k)]))
        return np.array(sorted(ring), dtype=np.int64), fan

    # ------------------------------------------------------------- geometry

    def face_normals(self, unit=True):
        if ("face_normals", unit) not in self._cache:
            p = self.vertices[self.faces]
            n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            if unit:
                norm = np.linalg.norm(n, axis=1, keepdims=True)
                n = n / np.where(norm > 0.0, norm, 1.0)
            n.setflags(write=False)
            self._cache[("face_normals", unit)] = n
        return self._cache[("face_normals", unit)]

    def face_areas(self):
        if "face_areas" not in self._cache:
            p = self.vertices[self.faces]
            a = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
            a.setflags(write=False)
            self._cache["face_areas"] = a
        return self._cache["face_areas"]

    def surface_area(self):
        return float(self.face_areas().sum())

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self):
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def differential_coordinates(self):
        """Per-vertex position minus the mean of its one-ring neighbors.

        Uniform (combinatorial) weights; translation-invariant and
        rotation-equivariant.
        """
        acc = np.zeros_like(self.vertices)
        np.add.at(acc, self.halfedge_src, self.vertices[self.halfedge_dst])
        valence = np.bincount(self.halfedge_src, minlength=self.n_vertices)
        return self.vertices - acc / valence[:, None]


def triangle_quality(a, b, c):
    """Shape quality of triangle(s) in [0, 1].

    ``4 * sqrt(3) * area / (l_ab^2 + l_bc^2 + l_ca^2)``: 1 for equilateral,
    0 for degenerate.  Accepts stacked inputs with shape (..., 3).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=-1)
    l2 = (
        np.sum((b - a) ** 2, axis=-1)
        + np.sum((c - b) ** 2, axis=-1)
        + np.sum((a - c) ** 2, axis=-1)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(l2 > 0.0, 2.0 * np.sqrt(3.0) * area2 / np.where(l2 > 0, l2, 1.0), 0.0)
    return q if q.ndim else float(q)


def check_link_condition(mesh, j, k):
    """True when collapsing edge ``(j, k)`` preserves manifoldness.

    The one-rings of the endpoints must share exactly two vertices and
    those two must not be connected by an edge.
    """
    if mesh.halfedge_between(j, k) is None:
        raise MeshError("(%d, %d) is not an edge" % (j, k))
    common = set(mesh.one_ring(j).tolist()) & set(mesh.one_ring(k).tolist())
    if len(common) != 2:
        return False
    a, b = sorted(common)
    return mesh.halfedge_between(a, b) is None


# --------------------------------------------------------------------- OBJ

def load_obj(path):
    """Read a Wavefront OBJ file into a ``Mesh``.

    Accepts ``v`` and triangular ``f`` records; ``vt``/``vn`` data and the
    slash-separated texture/normal references inside ``f`` entries are
    ignored.  Negative (relative) face indices are resolved.  Quad or
    larger faces, malformed records, boundary edges, and non-manifold
    edges are rejected with a diagnostic.
    """
    vertices = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                try:
                    xyz = [float(p) for p in parts[1:4]]
                except ValueError:
                    raise MeshError("%s:%d: malformed vertex record" % (path, lineno))
                if len(parts) < 4:
                    raise MeshError("%s:%d: vertex needs 3 coordinates" % (path, lineno))
                vertices.append(xyz)
            elif tag == "f":
                refs = parts[1:]
                if len(refs) != 3:
                    raise MeshError(
                        "%s:%d: only triangle faces are supported (got %d corners)"
                        % (path, lineno, len(refs))
                    )
                idx = []
                for ref in refs:
                    head = ref.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshError("%s:%d: malformed face record" % (path, lineno))
                    if i == 0:
                        raise MeshError("%s:%d: face index 0 is invalid" % (path, lineno))
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                faces.append(idx)
            else:
                continue  # vt, vn, s, o, usemtl, ...
    if not vertices or not faces:
        raise MeshError("%s: no triangle mesh data found" % path)
    return Mesh(np.array(vertices), np.array(faces))


def obj_dumps(mesh):
    """Serialize to OBJ text: ``v`` lines then ``f`` lines, LF endings.

    Floats are printed with shortest round-trip precision, so a
    save/load cycle reproduces coordinates bit-exactly.
    """
    out = []
    for x, y, z in mesh.vertices + 0.0:  # +0.0 normalizes -0.0
        out.append("v %r %r %r" % (float(x), float(y), float(z)))
    for a, b, c in mesh.faces + 1:
        out.append("f %d %d %d" % (a, b, c))
    return "\n".join(out) + "\n"


def save_obj(mesh, path):
    """Write ``mesh`` to ``path`` in OBJ format (see ``obj_dumps``)."""
    text = obj_dumps(mesh)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def mesh_digest(mesh):
    """SHA-256 hex digest of the canonical OBJ serialization."""
    return hashlib.sha256(obj_dumps(mesh).encode("utf-8")).hexdigest()


# ------------------------------------------------------------- subdivision

@dataclass(frozen=True)
class MidpointParents:
    """Where each vertex of a midpoint-refined mesh sits on its input mesh.

    ``points[i]`` is the barycentric location of output vertex ``i`` on the
    input mesh; ``odd_edges[r]`` is the input edge whose midpoint became
    output vertex ``V + r``.
    """

    points: list
    odd_edges: np.ndarray = field(repr=False)


def midpoint_connectivity(faces, n_vertices):
    """Topology of one midpoint (1-to-4) refinement step.

    Returns ``(edges, new_faces)``: the sorted undirected edge list of the
    input connectivity, and the refined face array where odd vertex
    ``n_vertices + r`` is the midpoint of ``edges[r]``.  Face ``4 * f + i``
    holds the corner triangle at corner ``i`` of input face ``f`` for
    ``i < 3`` and the center triangle for ``i == 3``, all counter-clockwise.
    """
    faces = np.asarray(faces, dtype=np.int64)
    src = faces.ravel()
    dst = faces[:, [1, 2, 0]].ravel()
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    ekey = lo.astype(np.int64) * n_vertices + hi
    uniq, inverse = np.unique(ekey, return_inverse=True)
    edges = np.column_stack([uniq // n_vertices, uniq % n_vertices])

    mid = n_vertices + inverse.reshape(-1, 3)  # midpoint ids per face corner edge
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    m_ab, m_bc, m_ca = mid[:, 0], mid[:, 1], mid[:, 2]
    new_faces = np.empty((len(faces) * 4, 3), dtype=np.int64)
    new_faces[0::4] = np.column_stack([a, m_ab, m_ca])
    new_faces[1::4] = np.column_stack([b, m_bc, m_ab])
    new_faces[2::4] = np.column_stack([c, m_ca, m_bc])
    new_faces[3::4] = np.column_stack([m_ab, m_bc, m_ca])
    return edges, new_faces


def _lowest_incident_face(faces, n_vertices):
    low = np.full(n_vertices, len(faces), dtype=np.int64)
    fidx = np.repeat(np.arange(len(faces)), 3)
    np.minimum.at(low, faces.ravel(), fidx)
    return low


def _edge_lowest_face(mesh):
    low = np.full(mesh.n_edges, mesh.n_faces, dtype=np.int64)
    np.minimum.at(low, mesh.halfedge_edge, np.arange(len(mesh.halfedge_src)) // 3)
    return low


def midpoint_topology_subdivide(mesh):
    """Split every face 1-to-4, inserting odd vertices at edge midpoints.

    Even vertices keep their indices; odd vertices are appended in
    ascending order of their undirected parent edge.  Returns the refined
    mesh and a ``MidpointParents`` record locating every output vertex on
    the input mesh (even vertices at a corner of their lowest-index
    incident face, odd vertices with weights (1/2, 1/2, 0) on the lower
    incident face of their parent edge).
    """
    edges, new_faces = midpoint_connectivity(mesh.faces, mesh.n_vertices)
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    new_vertices = np.vstack([mesh.vertices, midpoints])

    points = []
    low_face = _lowest_incident_face(mesh.faces, mesh.n_vertices)
    for v in range(mesh.n_vertices):
        f = int(low_face[v])
        coords = np.zeros(3)
        coords[np.nonzero(mesh.faces[f] == v)[0][0]] = 1.0
        points.append(BarycentricPoint(f, coords))
    edge_face = _edge_lowest_face(mesh)
    for r in range(len(edges)):
        f = int(edge_face[r])
        coords = np.zeros(3)
        tri = mesh.faces[f]
        coords[np.nonzero(tri == edges[r, 0])[0][0]] = 0.5
        coords[np.nonzero(tri == edges[r, 1])[0][0]] = 0.5
        points.append(BarycentricPoint(f, coords))

    return Mesh(new_vertices, new_faces), MidpointParents(points, edges)


def normalize_unit_box(mesh):
    """Center the bounding box at the origin and scale its diagonal to 1.

    Returns the normalized mesh and the ``SimilarityTransform`` that was
    applied (so results can be mapped back with ``transform.invert``).
    """
    lo, hi = mesh.bounding_box()
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0.0:
        raise MeshError("degenerate mesh: bounding-box diagonal is zero")
    transform = SimilarityTransform(1.0 / diag, (lo + hi) / 2.0)
    return Mesh(transform.apply(mesh.vertices), mesh.faces), transform
