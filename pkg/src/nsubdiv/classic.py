"""Classic subdivision baselines: Loop, modified butterfly, midpoint.

All three share the same 1-to-4 topological refinement (see
``mesh.midpoint_connectivity``); they differ only in how the even and odd
vertex positions are computed.  The smoothing masks are affine-invariant
(weights sum to one), so subdividing a transformed mesh equals
transforming the subdivided mesh.
"""

import numpy as np

from .mesh import Mesh, midpoint_connectivity


def loop_even_weight(valence):
    """Loop's even-vertex neighbor weight beta for a given valence."""
    n = float(valence)
    return (5.0 / 8.0 - (3.0 / 8.0 + 0.25 * np.cos(2.0 * np.pi / n)) ** 2) / n


def _edge_flap_tables(mesh):
    """Per undirected edge: endpoints (a, b) and the two opposite vertices."""
    opp = mesh.halfedge_dst[mesh.next_halfedge(np.arange(len(mesh.halfedge_src)))]
    order = np.argsort(mesh.halfedge_edge, kind="stable")
    pairs = order.reshape(-1, 2)  # two half-edges per edge, edge-sorted
    return mesh.edges[:, 0], mesh.edges[:, 1], opp[pairs[:, 0]], opp[pairs[:, 1]], pairs


def _loop_level(mesh):
    edges, new_faces = midpoint_connectivity(mesh.faces, mesh.n_vertices)
    a, b, c, d, _ = _edge_flap_tables(mesh)
    v = mesh.vertices
    odd = 0.375 * (v[a] + v[b]) + 0.125 * (v[c] + v[d])

    valence = np.bincount(mesh.halfedge_src, minlength=mesh.n_vertices)
    ring_sum = np.zeros_like(v)
    np.add.at(ring_sum, mesh.halfedge_src, v[mesh.halfedge_dst])
    beta = np.array([loop_even_weight(n) for n in valence])
    even = (1.0 - valence * beta)[:, None] * v + beta[:, None] * ring_sum
    return Mesh(np.vstack([even, odd]), new_faces)


def _butterfly_extraordinary_weights(valence):
    """Neighbor weights of the modified-butterfly extraordinary rule.

    Index 0 corresponds to the odd vertex's far endpoint; the center
    vertex itself takes weight 3/4 (the weights below sum to 1/4).
    """
    n = valence
    if n == 3:
        return np.array([5.0 / 12.0, -1.0 / 12.0, -1.0 / 12.0])
    if n == 4:
        return np.array([3.0 / 8.0, 0.0, -1.0 / 8.0, 0.0])
    i = np.arange(n)
    return (0.25 + np.cos(2.0 * np.pi * i / n) + 0.5 * np.cos(4.0 * np.pi * i / n)) / n


def _butterfly_regular_point(mesh, h):
    """Odd point of an edge whose two endpoints both have valence 6."""
    v = mesh.vertices
    nxt, prv, twin = mesh.next_halfedge, mesh.prev_halfedge, mesh.twin
    dst = mesh.halfedge_dst

    a = mesh.halfedge_src[h]
    b = dst[h]
    c = dst[nxt(h)]          # opposite vertex in the left face (a, b, c)
    ht = int(twin[h])        # right face (b, a, d)
    d = dst[nxt(ht)]
    # wings: opposite vertices across the four outer edges of the two faces
    w1 = dst[nxt(int(twin[nxt(h)]))]       # across (b, c)
    w2 = dst[nxt(int(twin[prv(h)]))]       # across (c, a)
    w3 = dst[nxt(int(twin[nxt(ht)]))]      # across (a, d)
    w4 = dst[nxt(int(twin[prv(ht)]))]      # across (d, b)
    return (
        0.5 * (v[a] + v[b])
        + 0.125 * (v[c] + v[d])
        - 0.0625 * (v[w1] + v[w2] + v[w3] + v[w4])
    )


def _butterfly_extraordinary_point(mesh, center, other):
    """Odd point from the valence-dependent rule around ``center``."""
    ring = mesh.one_ring(center)
    k = int(np.nonzero(ring == other)[0][0])
    ring = np.concatenate([ring[k:], ring[:k]])  # start the ring at ``other``
    s = _butterfly_extraordinary_weights(len(ring))
    return 0.75 * mesh.vertices[center] + s @ mesh.vertices[ring]


def _butterfly_level(mesh):
    edges, new_faces = midpoint_connectivity(mesh.faces, mesh.n_vertices)
    valence = np.bincount(mesh.halfedge_src, minlength=mesh.n_vertices)
    order = np.argsort(mesh.halfedge_edge, kind="stable")
    first_halfedge = order.reshape(-1, 2)[:, 0]

    odd = np.empty((len(edges), 3))
    for r in range(len(edges)):
        a, b = int(edges[r, 0]), int(edges[r, 1])
        reg_a = valence[a] == 6
        reg_b = valence[b] == 6
        if reg_a and reg_b:
            odd[r] = _butterfly_regular_point(mesh, int(first_halfedge[r]))
        elif reg_a:
            odd[r] = _butterfly_extraordinary_point(mesh, b, a)
        elif reg_b:
            odd[r] = _butterfly_extraordinary_point(mesh, a, b)
        else:
            odd[r] = 0.5 * (
                _butterfly_extraordinary_point(mesh, a, b)
                + _butterfly_extraordinary_point(mesh, b, a)
            )
    return Mesh(np.vstack([mesh.vertices, odd]), new_faces)


def _midpoint_level(mesh):
    edges, new_faces = midpoint_connectivity(mesh.faces, mesh.n_vertices)
    odd = (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]) * 0.5
    return Mesh(np.vstack([mesh.vertices, odd]), new_faces)


def loop_subdivide(mesh, levels):
    """Classic Loop subdivision.

    Odd vertices take 3/8 of each edge endpoint plus 1/8 of the two
    opposite vertices; even vertices are relaxed with the valence-dependent
    beta weights (beta(6) = 1/16).
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    for _ in range(levels):
        mesh = _loop_level(mesh)
    return mesh


def butterfly_subdivide(mesh, levels):
    """Modified butterfly subdivision (interpolating).

    Even vertices are kept unchanged.  Odd vertices use the 8-point
    stencil when both endpoints are regular (valence 6), the
    valence-dependent rule around an extraordinary endpoint, and the
    average of the two extraordinary results when both ends are
    extraordinary.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    for _ in range(levels):
        mesh = _butterfly_level(mesh)
    return mesh


def midpoint_subdivide(mesh, levels):
    """Polyhedral midpoint refinement: split faces, keep the geometry."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    for _ in range(levels):
        mesh = _midpoint_level(mesh)
    return mesh
