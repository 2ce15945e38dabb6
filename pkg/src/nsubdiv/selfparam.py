"""Edge-collapse decimation with successive self-parameterization.

Decimation collapses one edge at a time.  For every collapse the one-ring
of the edge is conformally flattened into a small 2D chart, the collapse
is replayed inside that chart (the ring boundary stays put, the surviving
vertex is re-flattened with the boundary held fixed), and both charts are
stored.  Chaining the per-collapse charts yields a bijective map from the
coarse result back to the original surface: any barycentric point on the
coarse mesh can be pushed through the chart sequence to a barycentric
point on the input mesh.

Implementation notes
--------------------
Vertex and face slots are stable during decimation: a collapse of edge
``(j, k)`` keeps slot ``j`` as the surviving vertex ``i``, rewrites the
faces that referenced ``k``, and marks ``k`` plus the two shared faces
dead.  Charts and re-indexing tables therefore reference slots of the
*input* mesh, and the compacted coarse mesh carries lookup tables back to
those slots.  The flattening is least-squares conformal with the edge
endpoints pinned; the post-collapse interior placement is the exact
minimizer of the same energy with the boundary fixed (a 2x2 solve).

A built ``BijectiveMap`` is immutable; ``map_point`` is read-only and safe
to call from multiple threads.  Decimation itself is a sequential
single-writer process.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from .mesh import (
    BarycentricPoint,
    Mesh,
    MeshError,
    mesh_digest,
    triangle_quality,
)

NORMAL_DOT_MIN = 0.2     # face-normal stability threshold for a collapse
QUALITY_MIN = 0.2        # minimum triangle quality, 3D and UV
ANGLE_SUM_TOL = 1e-7     # interior chart vertices must close up to 2*pi
LOCATE_TOL = 1e-6        # chart point location slack before declaring corruption


class CollapseRejected(RuntimeError):
    """An edge collapse failed one of the validity criteria."""

    def __init__(self, reason):
        super().__init__("collapse rejected: %s" % reason)
        self.reason = reason


class FlattenError(RuntimeError):
    """Conformal flattening failed (non-disk patch or singular system)."""


class MapError(RuntimeError):
    """Chart point location failed while replaying the bijective map."""


# ----------------------------------------------------------------- quadrics

def init_quadrics(mesh):
    """Per-vertex 4x4 error quadrics from area-weighted face planes.

    Each face contributes ``area * outer(p, p)`` with ``p = (n, d)`` its
    unit-normal plane, to each of its three corners.
    """
    v = mesh.vertices[mesh.faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    area = 0.5 * norm[:, 0]
    n = n / np.where(norm > 0.0, norm, 1.0)
    d = -np.einsum("fi,fi->f", n, v[:, 0])
    p = np.concatenate([n, d[:, None]], axis=1)
    k = area[:, None, None] * np.einsum("fi,fj->fij", p, p)
    q = np.zeros((mesh.n_vertices, 4, 4))
    np.add.at(q, mesh.faces[:, 0], k)
    np.add.at(q, mesh.faces[:, 1], k)
    np.add.at(q, mesh.faces[:, 2], k)
    return q


def quadric_error(q, pos):
    """Evaluate quadric(s) at position(s): homogeneous p^T Q p."""
    pos = np.asarray(pos, dtype=float)
    h = np.concatenate([pos, np.ones(pos.shape[:-1] + (1,))], axis=-1)
    return np.einsum("...i,...ij,...j->...", h, q, h)


def _optimal_positions(q, midpoints):
    """QSLIM placement for a batch of edge quadrics.

    Solves the 3x3 stationarity system per edge; singular systems fall
    back to the edge midpoint.  Returns (positions, errors).
    """
    a = q[:, :3, :3]
    b = q[:, :3, 3]
    det = np.linalg.det(a)
    scale = np.maximum(np.linalg.norm(a, axis=(1, 2)), 1e-30)
    solvable = np.abs(det) > 1e-12 * scale**3
    pos = np.array(midpoints, dtype=float)
    if np.any(solvable):
        sol = np.linalg.solve(a[solvable], -b[solvable][..., None])[..., 0]
        ok = np.all(np.isfinite(sol), axis=1)
        idx = np.nonzero(solvable)[0][ok]
        pos[idx] = sol[ok]
    return pos, quadric_error(q, pos)


# --------------------------------------------------------------- UV charts

@dataclass
class UVChart:
    """Injective 2D chart over a collapse neighborhood.

    ``vertex_ids``/``faces`` reference vertex and face slots of the level
    mesh; ``tris`` lists chart-local corner indices aligned with each
    face's corner order, so barycentric coordinates transfer directly
    between the chart and the mesh face.
    """

    vertex_ids: np.ndarray
    uv: np.ndarray
    faces: np.ndarray
    tris: np.ndarray
    kind: str
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def local_index(self, vertex_id):
        return int(np.nonzero(self.vertex_ids == vertex_id)[0][0])

    def signed_areas(self):
        p = self.uv[self.tris]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def angle_sum(self, local_vertex):
        """Total interior angle of the chart triangles around a vertex."""
        total = 0.0
        for tri in self.tris:
            where = np.nonzero(tri == local_vertex)[0]
            if where.size == 0:
                continue
            c = int(where[0])
            p = self.uv[tri]
            u = p[(c + 1) % 3] - p[c]
            w = p[(c + 2) % 3] - p[c]
            total += np.arctan2(abs(u[0] * w[1] - u[1] * w[0]), u @ w)
        return total

    def area_total(self):
        return float(self.signed_areas().sum())

    # -- point transfer helpers (cached; charts are frozen once recorded)

    def _tables(self):
        if "tables" not in self._cache:
            order = np.argsort(self.faces)
            tri_uv = self.uv[self.tris]
            origin = tri_uv[:, 0]
            basis = np.stack([tri_uv[:, 1] - origin, tri_uv[:, 2] - origin], axis=-1)
            inv = np.linalg.inv(basis)
            self._cache["tables"] = (self.faces[order], order, origin, inv)
        return self._cache["tables"]

    def uv_of(self, rows, coords):
        """Chart coordinates of barycentric points on chart faces."""
        return np.einsum("nk,nkd->nd", coords, self.uv[self.tris[rows]])

    def rows_for_faces(self, face_ids):
        sorted_faces, order, _, _ = self._tables()
        pos = np.searchsorted(sorted_faces, face_ids)
        return order[pos]

    def locate(self, uv):
        """Containing triangle and barycentric coords for chart points.

        Every query point is tested against all chart triangles; the
        triangle maximizing the minimum barycentric coordinate wins, which
        is robust for points on shared edges.
        """
        _, _, origin, inv = self._tables()
        rel = uv[:, None, :] - origin[None, :, :]
        w = np.einsum("mij,nmj->nmi", inv, rel)
        bary = np.concatenate([1.0 - w.sum(axis=2, keepdims=True), w], axis=2)
        score = bary.min(axis=2)
        best = np.argmax(score, axis=1)
        pick = bary[np.arange(len(uv)), best]
        return best, pick, score[np.arange(len(uv)), best]


def _lscm(points3, tris, pins, pin_uv):
    """Least-squares conformal map of a small patch.

    ``points3`` (n, 3) and ``tris`` (m, 3) describe the patch in local
    indexing; ``pins`` are two local vertex indices fixed at ``pin_uv``.
    Returns (n, 2) chart coordinates.  Raises ``FlattenError`` when the
    patch contains a degenerate triangle or the system is rank-deficient.
    """
    n = len(points3)
    m = len(tris)
    p = points3[tris]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    x1 = np.linalg.norm(e1, axis=1)
    if np.any(x1 <= 0.0):
        raise FlattenError("degenerate triangle in patch")
    ex = e1 / x1[:, None]
    x2 = np.einsum("mi,mi->m", e2, ex)
    perp = e2 - x2[:, None] * ex
    h = np.linalg.norm(perp, axis=1)
    if np.any(h <= 0.0):
        raise FlattenError("degenerate triangle in patch")
    area = 0.5 * x1 * h

    # 2D hat-function gradients from the per-triangle isometric layout
    q = np.zeros((m, 3, 2))
    q[:, 1, 0] = x1
    q[:, 2, 0] = x2
    q[:, 2, 1] = h
    edge_opp = q[:, [2, 0, 1], :] - q[:, [1, 2, 0], :]  # edge opposite corner j
    grad = np.stack([-edge_opp[..., 1], edge_opp[..., 0]], axis=-1)
    grad /= (2.0 * area)[:, None, None]

    # rows: sqrt(A) * (du/dx - dv/dy) and sqrt(A) * (du/dy + dv/dx)
    w = np.sqrt(area)
    rows = np.zeros((2 * m, 2 * n))
    r = np.arange(m)
    for c in range(3):
        col = tris[:, c]
        gx = grad[:, c, 0]
        gy = grad[:, c, 1]
        rows[2 * r, col] += w * gx
        rows[2 * r, n + col] -= w * gy
        rows[2 * r + 1, col] += w * gy
        rows[2 * r + 1, n + col] += w * gx

    pinned_cols = np.array([pins[0], pins[1], n + pins[0], n + pins[1]])
    pinned_vals = np.array([pin_uv[0, 0], pin_uv[1, 0], pin_uv[0, 1], pin_uv[1, 1]])
    free = np.setdiff1d(np.arange(2 * n), pinned_cols)
    rhs = -rows[:, pinned_cols] @ pinned_vals
    sol, _, rank, _ = np.linalg.lstsq(rows[:, free], rhs, rcond=None)
    if rank < len(free):
        raise FlattenError("rank-deficient conformal system")
    z = np.zeros(2 * n)
    z[pinned_cols] = pinned_vals
    z[free] = sol
    return np.column_stack([z[:n], z[n:]])


def _solve_interior_uv(points3, tris, uv, interior):
    """Conformal-energy-minimizing chart position of one interior vertex.

    All other chart vertices are held fixed; the stationarity condition
    of the least-squares conformal energy reduces to a 2x2 linear system.
    Returns the (2,) position or None when the system is singular.
    """
    n = len(points3)
    m = len(tris)
    p = points3[tris]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    x1 = np.linalg.norm(e1, axis=1)
    if np.any(x1 <= 0.0):
        return None
    ex = e1 / x1[:, None]
    x2 = np.einsum("mi,mi->m", e2, ex)
    perp = e2 - x2[:, None] * ex
    h = np.linalg.norm(perp, axis=1)
    if np.any(h <= 0.0):
        return None
    area = 0.5 * x1 * h

    q = np.zeros((m, 3, 2))
    q[:, 1, 0] = x1
    q[:, 2, 0] = x2
    q[:, 2, 1] = h
    edge_opp = q[:, [2, 0, 1], :] - q[:, [1, 2, 0], :]
    grad = np.stack([-edge_opp[..., 1], edge_opp[..., 0]], axis=-1)
    grad /= (2.0 * area)[:, None, None]
    w = np.sqrt(area)

    # residuals r1, r2 per triangle as linear functions of (u_i, v_i)
    a_mat = np.zeros((2, 2))
    b_vec = np.zeros(2)
    for t in range(m):
        coeff = np.zeros((2, 2))  # rows r1, r2; cols (u_i, v_i)
        const = np.zeros(2)
        for c in range(3):
            vid = tris[t, c]
            gx = w[t] * grad[t, c, 0]
            gy = w[t] * grad[t, c, 1]
            if vid == interior:
                coeff[0, 0] += gx
                coeff[0, 1] -= gy
                coeff[1, 0] += gy
                coeff[1, 1] += gx
            else:
                const[0] += gx * uv[vid, 0] - gy * uv[vid, 1]
                const[1] += gy * uv[vid, 0] + gx * uv[vid, 1]
        a_mat += coeff.T @ coeff
        b_vec += coeff.T @ const
    det = a_mat[0, 0] * a_mat[1, 1] - a_mat[0, 1] * a_mat[1, 0]
    if abs(det) <= 1e-14 * max(1.0, abs(a_mat).max()) ** 2:
        return None
    return np.linalg.solve(a_mat, -b_vec)


def flatten_one_ring(mesh, edge):
    """Free-boundary conformal chart of an edge's combined one-ring.

    The fan of all faces incident to either endpoint is flattened with
    endpoint ``j`` pinned at the origin and ``k`` at ``(|xj - xk|, 0)``.
    """
    j, k = int(edge[0]), int(edge[1])
    if mesh.halfedge_between(j, k) is None:
        raise MeshError("(%d, %d) is not an edge" % (j, k))
    _, fan = mesh.edge_neighborhood(j, k)
    return _flatten_fan(mesh.vertices, mesh.faces, fan, j, k, kind="pre")


def _flatten_fan(positions, faces, fan_ids, j, k, kind):
    triples = faces[fan_ids]
    vertex_ids = np.unique(triples)
    local = {int(v): i for i, v in enumerate(vertex_ids)}
    tris = np.vectorize(local.__getitem__)(triples)
    n_edges = len(set(
        (min(a, b), max(a, b))
        for tri in tris for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))
    ))
    if len(vertex_ids) - n_edges + len(tris) != 1:  # Euler characteristic of a disk
        raise FlattenError("neighborhood fan is not a topological disk")
    pts = positions[vertex_ids]
    pin_len = float(np.linalg.norm(positions[j] - positions[k]))
    if pin_len <= 0.0:
        raise FlattenError("zero-length pinned edge")
    uv = _lscm(pts, tris, (local[j], local[k]), np.array([[0.0, 0.0], [pin_len, 0.0]]))
    return UVChart(vertex_ids, uv, np.asarray(fan_ids, dtype=np.int64), tris, kind)


def reflatten_interior(chart, mesh_after, i):
    """Chart of the post-collapse one-ring with its boundary held fixed.

    ``chart`` is the pre-collapse chart of the edge neighborhood;
    ``mesh_after`` shares vertex indexing with it apart from the removed
    endpoint.  The interior vertex ``i`` is placed at the minimizer of the
    fixed-boundary conformal energy.
    """
    i = int(i)
    fan = mesh_after.vertex_faces(i)
    triples = mesh_after.faces[fan]
    return _reflatten(mesh_after.vertices, triples, fan, chart, i)


def _reflatten(positions, triples, fan_ids, chart_pre, i):
    vertex_ids = np.unique(triples)
    local = {int(v): li for li, v in enumerate(vertex_ids)}
    tris = np.vectorize(local.__getitem__)(triples)
    pts = positions[vertex_ids]
    uv = np.zeros((len(vertex_ids), 2))
    for vid, li in local.items():
        if vid != i:
            uv[li] = chart_pre.uv[chart_pre.local_index(vid)]
    sol = _solve_interior_uv(pts, tris, uv, local[i])
    if sol is None:
        raise CollapseRejected("singular interior flattening")
    uv[local[i]] = sol
    return UVChart(vertex_ids, uv, np.asarray(fan_ids, dtype=np.int64), tris, "post")


# ----------------------------------------------------------- collapse data

@dataclass
class CollapseRecord:
    """Everything needed to replay one edge collapse and its chart map.

    ``faces_rewritten`` rows are ``(face, a, b, c)``: the face's vertex
    triple after the collapse.  Boundary chart coordinates are
    bit-identical between ``chart_pre`` and ``chart_post``.
    """

    j: int
    k: int
    i: int
    position: np.ndarray
    chart_pre: UVChart
    chart_post: UVChart
    faces_removed: np.ndarray
    faces_rewritten: np.ndarray


@dataclass
class DecimationResult:
    coarse: Mesh
    bijective_map: "BijectiveMap"
    reached_target: bool
    n_collapses: int


class BijectiveMap:
    """Composition of per-collapse chart correspondences.

    Maps barycentric points of the coarse mesh to barycentric points of
    the fine (input) mesh by replaying the collapse records in reverse.
    Instances are immutable and safe for concurrent ``map_point`` calls.
    """

    def __init__(self, fine, coarse, records, coarse_vertex_ids, coarse_face_ids):
        self.fine = fine
        self.coarse = coarse
        self.records = list(records)
        self.coarse_vertex_ids = np.asarray(coarse_vertex_ids, dtype=np.int64)
        self.coarse_face_ids = np.asarray(coarse_face_ids, dtype=np.int64)

    def map_points(self, faces, coords):
        """Batched coarse-to-fine transfer.

        ``faces`` (N,) index coarse-mesh faces; ``coords`` (N, 3) are
        barycentric weights on those faces.  Returns ``(faces, coords,
        positions)`` on the fine mesh.
        """
        faces = self.coarse_face_ids[np.asarray(faces, dtype=np.int64)]
        coords = np.array(coords, dtype=float)
        for idx in range(len(self.records) - 1, -1, -1):
            rec = self.records[idx]
            post = rec.chart_post
            sorted_faces = post._tables()[0]
            pos = np.searchsorted(sorted_faces, faces)
            member = sorted_faces[np.minimum(pos, len(sorted_faces) - 1)] == faces
            if not member.any():
                continue
            sel = np.nonzero(member)[0]
            rows = post.rows_for_faces(faces[sel])
            uv = post.uv_of(rows, coords[sel])
            best, bary, score = rec.chart_pre.locate(uv)
            if score.min() < -LOCATE_TOL:
                raise MapError(
                    "point location failed at record %d (min coordinate %.3g)"
                    % (idx, float(score.min()))
                )
            bary = np.maximum(bary, -1e-10)
            bary /= bary.sum(axis=1, keepdims=True)
            faces[sel] = rec.chart_pre.faces[best]
            coords[sel] = bary
        positions = np.einsum("nk,nkd->nd", coords, self.fine.vertices[self.fine.faces[faces]])
        return faces, coords, positions

    def map_point(self, point):
        """Map one coarse ``BarycentricPoint``; returns (point, position)."""
        faces, coords, positions = self.map_points(
            np.array([point.face]), point.coords[None, :]
        )
        return BarycentricPoint(int(faces[0]), coords[0]), positions[0]

    def replay_connectivity(self):
        """Reapply the face re-indexing tables to the fine connectivity.

        Returns the compacted face array, which must equal the coarse
        mesh's faces exactly.
        """
        faces = np.array(self.fine.faces)
        alive = np.ones(len(faces), dtype=bool)
        for rec in self.records:
            alive[rec.faces_removed] = False
            if len(rec.faces_rewritten):
                faces[rec.faces_rewritten[:, 0]] = rec.faces_rewritten[:, 1:]
        vmap = np.full(self.fine.n_vertices, -1, dtype=np.int64)
        vmap[self.coarse_vertex_ids] = np.arange(len(self.coarse_vertex_ids))
        return vmap[faces[self.coarse_face_ids]]


def map_point(bijective_map, point):
    """Module-level convenience wrapper for ``BijectiveMap.map_point``."""
    return bijective_map.map_point(point)


# ------------------------------------------------------- decimation driver

class _EdgeStore:
    """Alive undirected edges with O(1) insert, remove and sampling."""

    def __init__(self, edges):
        self.items = [tuple(int(x) for x in e) for e in edges]
        self.pos = {e: i for i, e in enumerate(self.items)}

    def __len__(self):
        return len(self.items)

    def __contains__(self, edge):
        return edge in self.pos

    def add(self, a, b):
        e = (a, b) if a < b else (b, a)
        if e in self.pos:
            return False
        self.pos[e] = len(self.items)
        self.items.append(e)
        return True

    def remove(self, a, b):
        e = (a, b) if a < b else (b, a)
        i = self.pos.pop(e, None)
        if i is None:
            return False
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i
        return True

    def sample(self, rng, n):
        idx = rng.integers(0, len(self.items), size=n)
        return [self.items[i] for i in idx]


class DecimationState:
    """Mutable decimation workspace with stable vertex/face slots."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.positions = np.array(mesh.vertices)
        self.faces = np.array(mesh.faces)
        self.vertex_alive = np.ones(mesh.n_vertices, dtype=bool)
        self.face_alive = np.ones(mesh.n_faces, dtype=bool)
        self.vfaces = [set() for _ in range(mesh.n_vertices)]
        for f, tri in enumerate(self.faces):
            for v in tri:
                self.vfaces[int(v)].add(f)
        self.quadrics = init_quadrics(mesh)
        self.versions = np.zeros(mesh.n_vertices, dtype=np.int64)
        self.edges = _EdgeStore(map(tuple, mesh.edges))
        self.n_alive = mesh.n_vertices

    def ring(self, v):
        out = set()
        for f in self.vfaces[v]:
            out.update(int(x) for x in self.faces[f])
        out.discard(int(v))
        return out

    def fan_faces(self, j, k):
        return np.array(sorted(self.vfaces[j] | self.vfaces[k]), dtype=np.int64)

    def edge_midpoint(self, j, k):
        return 0.5 * (self.positions[j] + self.positions[k])

    def candidate(self, j, k):
        """QSLIM-optimal placement and error for collapsing (j, k)."""
        q = (self.quadrics[j] + self.quadrics[k])[None]
        pos, err = _optimal_positions(q, self.edge_midpoint(j, k)[None])
        return pos[0], float(err[0])

    # -- validity ---------------------------------------------------------

    def validate(self, j, k, new_pos):
        """Run all collapse-validity criteria for edge ``(j, k)``.

        Returns ``(ok, reason, charts)`` where ``charts`` is the
        ``(pre, post)`` pair when every check passed.  The checks run
        cheapest first: link condition, Euclidean normal stability, 3D
        triangle quality, then the chart-based checks (positive UV areas,
        2*pi interior angle sums, UV triangle quality).
        """
        j, k = int(j), int(k)
        ring_j = self.ring(j)
        ring_k = self.ring(k)
        common = ring_j & ring_k
        if len(common) != 2:
            return False, "link condition", None
        a, b = sorted(common)
        if self.vfaces[a] & self.vfaces[b]:
            return False, "link condition", None

        dead = sorted(self.vfaces[j] & self.vfaces[k])
        if len(dead) != 2:
            return False, "link condition", None
        fan = self.fan_faces(j, k)
        survivors = np.array([f for f in fan if f not in dead], dtype=np.int64)

        pre_tri = self.faces[survivors]
        post_tri = np.where(pre_tri == k, j, pre_tri)
        p_pre = self.positions[pre_tri]
        post_positions = self.positions  # read-only view; j overridden below
        p_post = post_positions[post_tri].copy()
        p_post[post_tri == j] = new_pos

        n_pre = np.cross(p_pre[:, 1] - p_pre[:, 0], p_pre[:, 2] - p_pre[:, 0])
        n_post = np.cross(p_post[:, 1] - p_post[:, 0], p_post[:, 2] - p_post[:, 0])
        len_pre = np.linalg.norm(n_pre, axis=1)
        len_post = np.linalg.norm(n_post, axis=1)
        if np.any(len_pre <= 0.0) or np.any(len_post <= 0.0):
            return False, "normal flip", None
        dots = np.einsum("fi,fi->f", n_pre / len_pre[:, None], n_post / len_post[:, None])
        if np.any(dots <= NORMAL_DOT_MIN):
            return False, "normal flip", None

        q3d = triangle_quality(p_post[:, 0], p_post[:, 1], p_post[:, 2])
        if np.any(q3d <= QUALITY_MIN):
            return False, "triangle quality", None

        try:
            chart_pre = _flatten_fan(self.positions, self.faces, fan, j, k, "pre")
        except FlattenError:
            return False, "flatten failure", None
        if np.any(chart_pre.signed_areas() <= 0.0):
            return False, "uv flip", None
        two_pi = 2.0 * np.pi
        for interior in (j, k):
            if abs(chart_pre.angle_sum(chart_pre.local_index(interior)) - two_pi) > ANGLE_SUM_TOL:
                return False, "uv overlap", None

        pos_buffer = self.positions.copy()
        pos_buffer[j] = new_pos
        try:
            chart_post = _reflatten(pos_buffer, post_tri, survivors, chart_pre, j)
        except CollapseRejected:
            return False, "singular interior flattening", None
        if np.any(chart_post.signed_areas() <= 0.0):
            return False, "uv flip", None
        if abs(chart_post.angle_sum(chart_post.local_index(j)) - two_pi) > ANGLE_SUM_TOL:
            return False, "uv overlap", None
        quv = chart_post.uv[chart_post.tris]
        quv3 = np.concatenate([quv, np.zeros(quv.shape[:2] + (1,))], axis=2)
        q_uv = triangle_quality(quv3[:, 0], quv3[:, 1], quv3[:, 2])
        if np.any(q_uv <= QUALITY_MIN):
            return False, "uv quality", None
        return True, "", (chart_pre, chart_post)

    # -- mutation ---------------------------------------------------------

    def collapse(self, j, k, new_pos, charts):
        """Apply a validated collapse; returns the ``CollapseRecord``."""
        j, k = int(j), int(k)
        chart_pre, chart_post = charts
        dead = sorted(self.vfaces[j] & self.vfaces[k])
        rewritten_ids = np.array(sorted(self.vfaces[k] - set(dead)), dtype=np.int64)
        ring_k = self.ring(k)

        for f in dead:
            for v in self.faces[f]:
                self.vfaces[int(v)].discard(f)
            self.face_alive[f] = False
        tri = self.faces[rewritten_ids]
        self.faces[rewritten_ids] = np.where(tri == k, j, tri)
        self.vfaces[j] |= set(int(f) for f in rewritten_ids)
        self.vfaces[k] = set()
        self.positions[j] = new_pos
        self.vertex_alive[k] = False
        self.quadrics[j] = self.quadrics[j] + self.quadrics[k]
        self.n_alive -= 1

        self.edges.remove(j, k)
        new_edges = []
        for x in ring_k:
            if x == j:
                continue
            self.edges.remove(k, x)
            if self.edges.add(j, x):
                new_edges.append((j, x) if j < x else (x, j))
        touched = [j] + sorted(self.ring(j))
        self.versions[touched] += 1

        rewritten = np.column_stack([rewritten_ids, self.faces[rewritten_ids]]) \
            if len(rewritten_ids) else np.zeros((0, 4), dtype=np.int64)
        record = CollapseRecord(
            j=j, k=k, i=j,
            position=np.array(new_pos, dtype=float),
            chart_pre=chart_pre,
            chart_post=chart_post,
            faces_removed=np.array(dead, dtype=np.int64),
            faces_rewritten=rewritten,
        )
        return record, new_edges, touched

    def compact(self):
        """Renumber the surviving slots into a fresh coarse ``Mesh``."""
        vids = np.nonzero(self.vertex_alive)[0]
        fids = np.nonzero(self.face_alive)[0]
        vmap = np.full(len(self.vertex_alive), -1, dtype=np.int64)
        vmap[vids] = np.arange(len(vids))
        coarse = Mesh(self.positions[vids], vmap[self.faces[fids]])
        return coarse, vids, fids


def validate_collapse(mesh, edge, new_pos):
    """Check all validity criteria for collapsing an edge of ``mesh``.

    Returns ``(ok, reason)``; ``reason`` names the first failed criterion
    (link condition, normal flip, triangle quality, uv flip, uv overlap,
    uv quality, or a flattening failure).
    """
    j, k = int(edge[0]), int(edge[1])
    if mesh.halfedge_between(j, k) is None:
        raise MeshError("(%d, %d) is not an edge" % (j, k))
    state = DecimationState(mesh)
    ok, reason, _ = state.validate(j, k, np.asarray(new_pos, dtype=float))
    return ok, reason


def collapse_edge_with_param(state, edge):
    """Validate and apply one instrumented collapse on a ``DecimationState``.

    Uses QSLIM-optimal placement (midpoint on singular quadrics); raises
    ``CollapseRejected`` when any validity criterion fails.
    """
    j, k = int(edge[0]), int(edge[1])
    new_pos, _ = state.candidate(j, k)
    ok, reason, charts = state.validate(j, k, new_pos)
    if not ok:
        raise CollapseRejected(reason)
    record, _, _ = state.collapse(j, k, new_pos, charts)
    return record


def _decimate_qslim(state, target, records):
    heap = []
    blocked = {}
    blocked_by_vertex = {}

    def push(a, b):
        if not (state.vertex_alive[a] and state.vertex_alive[b]):
            return
        pos, err = state.candidate(a, b)
        heapq.heappush(heap, (err, a, b, int(state.versions[a]), int(state.versions[b])))

    for a, b in state.edges.items:
        push(a, b)

    while state.n_alive > target:
        found = None
        while heap:
            err, a, b, va, vb = heapq.heappop(heap)
            e = (a, b)
            if e not in state.edges:
                continue
            if state.versions[a] != va or state.versions[b] != vb:
                push(a, b)
                continue
            new_pos, _ = state.candidate(a, b)
            ok, _, charts = state.validate(a, b, new_pos)
            if ok:
                found = (a, b, new_pos, charts)
                break
            blocked[e] = True
            blocked_by_vertex.setdefault(a, set()).add(e)
            blocked_by_vertex.setdefault(b, set()).add(e)
        if found is None:
            return False
        a, b, new_pos, charts = found
        record, new_edges, touched = state.collapse(a, b, new_pos, charts)
        records.append(record)
        for e in new_edges:
            push(*e)
        for v in touched:
            for e in blocked_by_vertex.pop(v, ()):  # re-examine disturbed edges
                if blocked.pop(e, None) and e in state.edges:
                    push(*e)
    return True


def _decimate_random100(state, target, records, rng, n_candidates=100, max_rounds=10):
    rounds = 0
    while state.n_alive > target and rounds < max_rounds:
        keys = state.edges.sample(rng, n_candidates)
        q = np.stack([state.quadrics[a] + state.quadrics[b] for a, b in keys])
        mids = np.stack([state.edge_midpoint(a, b) for a, b in keys])
        pos, err = _optimal_positions(q, mids)
        order = sorted(range(len(keys)), key=lambda i: (err[i], keys[i]))
        seen = set()
        success = False
        for idx in order:
            e = keys[idx]
            if e in seen:
                continue
            seen.add(e)
            ok, _, charts = state.validate(e[0], e[1], pos[idx])
            if ok:
                record, _, _ = state.collapse(e[0], e[1], pos[idx], charts)
                records.append(record)
                success = True
                break
        if success:
            rounds = 0
        else:
            rounds += 1
    return state.n_alive <= target


def decimate(mesh, target_vertices, policy="qslim", seed=0):
    """Decimate to ``target_vertices`` while building the bijective map.

    ``policy`` selects the collapse order: ``"qslim"`` pops the globally
    minimal quadric-error edge from a priority queue; ``"random100"``
    samples 100 candidate edges uniformly with replacement and collapses
    the lowest-error valid one (resampling up to 10 rounds before giving
    up).  Both are deterministic given ``(mesh, policy, seed)``.

    Returns a ``DecimationResult``; ``reached_target`` is False when no
    valid edge remained before the target was met (best-effort output).
    """
    if target_vertices < 4:
        raise ValueError("target_vertices must be >= 4")
    if policy not in ("qslim", "random100"):
        raise ValueError("unknown policy %r" % policy)
    state = DecimationState(mesh)
    records = []
    if state.n_alive > target_vertices:
        if policy == "qslim":
            reached = _decimate_qslim(state, target_vertices, records)
        else:
            rng = np.random.Generator(np.random.PCG64(seed))
            reached = _decimate_random100(state, target_vertices, records, rng)
    else:
        reached = True
    coarse, vids, fids = state.compact()
    bmap = BijectiveMap(mesh, coarse, records, vids, fids)
    return DecimationResult(coarse, bmap, reached, len(records))


# ------------------------------------------------------------ .nsm format

def _write_chart(fh, chart):
    fh.write("chart %s %d %d\n" % (chart.kind, len(chart.vertex_ids), len(chart.faces)))
    for vid, (u, v) in zip(chart.vertex_ids, chart.uv):
        fh.write("cv %d %r %r\n" % (vid, float(u), float(v)))
    for fid, tri in zip(chart.faces, chart.tris):
        fh.write("ct %d %d %d %d\n" % (fid, tri[0], tri[1], tri[2]))


def _read_chart(lines, at):
    tag, kind, nv, nf = lines[at].split()
    assert tag == "chart"
    nv, nf = int(nv), int(nf)
    vertex_ids = np.empty(nv, dtype=np.int64)
    uv = np.empty((nv, 2))
    for i in range(nv):
        parts = lines[at + 1 + i].split()
        vertex_ids[i] = int(parts[1])
        uv[i] = [float(parts[2]), float(parts[3])]
    faces = np.empty(nf, dtype=np.int64)
    tris = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        parts = lines[at + 1 + nv + i].split()
        faces[i] = int(parts[1])
        tris[i] = [int(parts[2]), int(parts[3]), int(parts[4])]
    return UVChart(vertex_ids, uv, faces, tris, kind), at + 1 + nv + nf


def save_map(bijective_map, path):
    """Serialize a ``BijectiveMap`` as a versioned ASCII ``.nsm`` file."""
    m = bijective_map
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("NSM 1\n")
        fh.write("fine_hash %s\n" % mesh_digest(m.fine))
        fh.write("coarse_hash %s\n" % mesh_digest(m.coarse))
        fh.write("coarse_vertices %s\n" % " ".join(map(str, m.coarse_vertex_ids)))
        fh.write("coarse_faces %s\n" % " ".join(map(str, m.coarse_face_ids)))
        fh.write("records %d\n" % len(m.records))
        for rec in m.records:
            fh.write("edge %d %d %d\n" % (rec.j, rec.k, rec.i))
            fh.write("position %r %r %r\n" % tuple(float(x) for x in rec.position))
            fh.write("faces_removed %d %d\n" % tuple(rec.faces_removed))
            fh.write("faces_rewritten %d\n" % len(rec.faces_rewritten))
            for row in rec.faces_rewritten:
                fh.write("fr %d %d %d %d\n" % tuple(row))
            _write_chart(fh, rec.chart_pre)
            _write_chart(fh, rec.chart_post)


def load_map(path, fine, coarse):
    """Load a ``.nsm`` file, checking it matches the endpoint meshes."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "NSM 1":
        raise MapError("%s: not an NSM 1 file" % path)
    if lines[1].split()[1] != mesh_digest(fine):
        raise MapError("%s: fine mesh hash mismatch" % path)
    if lines[2].split()[1] != mesh_digest(coarse):
        raise MapError("%s: coarse mesh hash mismatch" % path)
    coarse_vertex_ids = np.array(lines[3].split()[1:], dtype=np.int64)
    coarse_face_ids = np.array(lines[4].split()[1:], dtype=np.int64)
    n_records = int(lines[5].split()[1])
    at = 6
    records = []
    for _ in range(n_records):
        _, j, k, i = lines[at].split()
        position = np.array(lines[at + 1].split()[1:], dtype=float)
        faces_removed = np.array(lines[at + 2].split()[1:], dtype=np.int64)
        n_rw = int(lines[at + 3].split()[1])
        at += 4
        rewritten = np.empty((n_rw, 4), dtype=np.int64)
        for r in range(n_rw):
            rewritten[r] = [int(x) for x in lines[at + r].split()[1:]]
        at += n_rw
        chart_pre, at = _read_chart(lines, at)
        chart_post, at = _read_chart(lines, at)
        records.append(
            CollapseRecord(int(j), int(k), int(i), position, chart_pre, chart_post,
                           faces_removed, rewritten)
        )
    return BijectiveMap(fine, coarse, records, coarse_vertex_ids, coarse_face_ids)
