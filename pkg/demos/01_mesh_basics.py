"""Mesh fundamentals: loading, adjacency queries, and midpoint refinement.

Builds a few sample shapes, pokes at their half-edge adjacency, and shows
what one topological refinement step does to the counts.
"""

import numpy as np

from nsubdiv import midpoint_topology_subdivide, shapes, triangle_quality

mesh = shapes.icosahedron()
print("icosahedron: %d vertices, %d edges, %d faces (Euler %d)"
      % (mesh.n_vertices, mesh.n_edges, mesh.n_faces, mesh.euler_characteristic))

print("\none-ring of vertex 0 (counter-clockwise):", mesh.one_ring(0))
neighbors, fan = mesh.edge_neighborhood(0, 1)
print("neighborhood of edge (0, 1): vertices", neighbors, "faces", fan)

d = mesh.differential_coordinates()
print("\ndifferential coordinate magnitudes: min %.3f max %.3f"
      % (np.linalg.norm(d, axis=1).min(), np.linalg.norm(d, axis=1).max()))

p = mesh.vertices[mesh.faces]
q = triangle_quality(p[:, 0], p[:, 1], p[:, 2])
print("face quality (1 = equilateral): min %.3f max %.3f" % (q.min(), q.max()))

refined, parents = midpoint_topology_subdivide(mesh)
print("\nafter one midpoint split: %d vertices, %d faces (Euler %d)"
      % (refined.n_vertices, refined.n_faces, refined.euler_characteristic))
odd = parents.points[mesh.n_vertices]
print("first odd vertex sits on input face %d with weights %s"
      % (odd.face, np.round(odd.coords, 3)))

torus = shapes.torus(16, 12)
print("\ntorus: %d vertices, Euler characteristic %d (genus 1)"
      % (torus.n_vertices, torus.euler_characteristic))
