"""Deterministic closed-manifold sample shapes used by demos and tests."""

import numpy as np

from .classic import midpoint_subdivide
from .mesh import Mesh


def tetrahedron():
    """Regular tetrahedron inscribed in the unit sphere."""
    v = np.array(
        [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ]
    ) / np.sqrt(3.0)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f)


def octahedron():
    """Unit octahedron: the six signed axis unit vectors."""
    v = np.array(
        [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]
    )
    f = np.array(
        [
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ]
    )
    return Mesh(v, f)


def cube(half_extent=1.0):
    """Axis-aligned cube split into 12 triangles, outward orientation."""
    s = half_extent
    v = np.array(
        [
            [-s, -s, -s], [s, -s, -s], [s, s, -s], [-s, s, -s],
            [-s, -s, s], [s, -s, s], [s, s, s], [-s, s, s],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],
            [4, 5, 6], [4, 6, 7],
            [0, 1, 5], [0, 5, 4],
            [1, 2, 6], [1, 6, 5],
            [2, 3, 7], [2, 7, 6],
            [3, 0, 4], [3, 4, 7],
        ]
    )
    return Mesh(v, f)


def icosahedron():
    """Regular icosahedron inscribed in the unit sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0],
            [1, phi, 0],
            [-1, -phi, 0],
            [1, -phi, 0],
            [0, -1, phi],
            [0, 1, phi],
            [0, -1, -phi],
            [0, 1, -phi],
            [phi, 0, -1],
            [phi, 0, 1],
            [-phi, 0, -1],
            [-phi, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v[0])
    f = np.array(
        [
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ]
    )
    return Mesh(v, f)


def icosphere(subdivisions=2, radius=1.0):
    """Sphere approximation: icosahedron refined by midpoint splits.

    After each split the new vertices are projected back onto the sphere,
    so every vertex lies at distance ``radius`` from the origin.
    """
    mesh = icosahedron()
    for _ in range(subdivisions):
        mesh = midpoint_subdivide(mesh, 1)
        v = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
        mesh = Mesh(v, mesh.faces)
    return Mesh(mesh.vertices * radius, mesh.faces)


def torus(n_major=24, n_minor=16, major_radius=1.0, minor_radius=0.4):
    """Triangulated torus with ``n_major * n_minor`` vertices (genus 1)."""
    if n_major < 3 or n_minor < 3:
        raise ValueError("torus needs at least 3 segments in each direction")
    u = 2.0 * np.pi * np.arange(n_major) / n_major
    w = 2.0 * np.pi * np.arange(n_minor) / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    r = major_radius + minor_radius * np.cos(ww)
    v = np.stack([r * np.cos(uu), r * np.sin(uu), minor_radius * np.sin(ww)], axis=-1)
    v = v.reshape(-1, 3)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces.append([a, b, c])
            faces.append([a, c, d])
    return Mesh(v, np.array(faces))


def bumpy_sphere(subdivisions=3, amplitude=0.25, frequency=3.0):
    """Sphere with a smooth deterministic radial bump field.

    A useful stand-in for an organic training shape: closed, curvature
    varies over the surface, no symmetry planes once the bumps are applied.
    """
    base = icosphere(subdivisions)
    v = base.vertices
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    field = (
        np.sin(frequency * x) * np.cos(frequency * y)
        + 0.5 * np.sin(frequency * y + 1.3) * np.cos(frequency * z)
        + 0.25 * np.sin(frequency * z + 0.7) * np.cos(frequency * x)
    )
    r = 1.0 + amplitude * field / 1.75
    return Mesh(v * r[:, None], base.faces)


def ellipsoid(subdivisions=3, radii=(1.0, 0.6, 0.45)):
    """Axis-aligned ellipsoid from a refined icosphere."""
    base = icosphere(subdivisions)
    return Mesh(base.vertices * np.asarray(radii), base.faces)
