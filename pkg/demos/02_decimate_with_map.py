"""Decimation with a bijective coarse-to-fine map.

Coarsens a sphere to 20% of its vertices while recording, for every edge
collapse, the pair of conformal charts that lets any coarse surface point
be traced back to the original surface.  Demonstrates the map by pushing a
dense point set through it and checking coverage of the fine mesh.
"""

import numpy as np

from nsubdiv import decimate, shapes
from nsubdiv.mesh import BarycentricPoint

fine = shapes.bumpy_sphere(3)
print("input: %d vertices / %d faces" % (fine.n_vertices, fine.n_faces))

result = decimate(fine, fine.n_vertices // 5, policy="qslim", seed=0)
coarse = result.coarse
bmap = result.bijective_map
print("coarse: %d vertices / %d faces after %d collapses (reached target: %s)"
      % (coarse.n_vertices, coarse.n_faces, result.n_collapses,
         result.reached_target))

# map the barycenter of every coarse face back onto the input surface
centers = np.full((coarse.n_faces, 3), 1.0 / 3.0)
faces, coords, positions = bmap.map_points(np.arange(coarse.n_faces), centers)
offset = np.linalg.norm(
    positions - np.einsum("nk,nkd->nd", centers,
                          coarse.vertices[coarse.faces]), axis=1)
print("\nface barycenters mapped to the fine surface:")
print("  distance between coarse point and its fine image: "
      "mean %.4f, max %.4f" % (offset.mean(), offset.max()))

# dense sampling covers every face of the original mesh (surjectivity)
k = 9
lattice = np.array([
    [(k - i - j) / k, i / k, j / k]
    for i in range(k + 1) for j in range(k + 1 - i)
])
ff, _, _ = bmap.map_points(
    np.repeat(np.arange(coarse.n_faces), len(lattice)),
    np.tile(lattice, (coarse.n_faces, 1)),
)
hit = np.zeros(fine.n_faces, dtype=bool)
hit[ff] = True
print("  %d samples per coarse face cover %d / %d fine faces"
      % (len(lattice), hit.sum(), fine.n_faces))

# a single point, the long way around
point = BarycentricPoint(0, np.array([0.2, 0.5, 0.3]))
image, position = bmap.map_point(point)
print("\ncoarse face 0 point %s -> fine face %d, weights %s"
      % (np.round(point.coords, 3), image.face, np.round(image.coords, 3)))
