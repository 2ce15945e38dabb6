"""Classic subdivision baselines side by side.

Subdivides a coarse shape with Loop (approximating), modified butterfly
(interpolating), and plain midpoint refinement, then compares how far each
result is from a high-resolution reference of the same shape.
"""

import numpy as np

from nsubdiv import (
    butterfly_subdivide,
    loop_subdivide,
    midpoint_subdivide,
    shapes,
    surface_distance,
)
from nsubdiv.selfparam import decimate

reference = shapes.bumpy_sphere(4)
coarse = decimate(reference, 300, policy="qslim", seed=1).coarse
print("reference: %d vertices, coarse: %d vertices"
      % (reference.n_vertices, coarse.n_vertices))

schemes = {
    "midpoint": midpoint_subdivide,
    "loop": loop_subdivide,
    "butterfly": butterfly_subdivide,
}
diag = reference.bbox_diagonal()
print("\ntwo-level subdivision, distances in 1/1000 of the bounding-box diagonal:")
print("%-10s %10s %10s" % ("scheme", "mean", "hausdorff"))
for name, fn in schemes.items():
    out = fn(coarse, 2)
    rep = surface_distance(out, reference, samples=20000, seed=0)
    print("%-10s %10.3f %10.3f"
          % (name, 1000 * rep.mean_distance / diag, 1000 * rep.hausdorff / diag))

# interpolating vs approximating: butterfly keeps the coarse vertices
loop2 = loop_subdivide(coarse, 2)
butter2 = butterfly_subdivide(coarse, 2)
n = coarse.n_vertices
print("\ncoarse-vertex displacement after two levels:")
print("  loop      %.5f (vertices relaxed)"
      % np.linalg.norm(loop2.vertices[:n] - coarse.vertices, axis=1).mean())
print("  butterfly %.5f (vertices kept)"
      % np.linalg.norm(butter2.vertices[:n] - coarse.vertices, axis=1).mean())
