"""End-to-end: self-supervised data, training, and learned subdivision.

Generates a small set of random coarsenings of one shape, trains the three
shared modules for a short budget, and compares the learned subdivision
against classic Loop on held-out coarsenings of the same shape.  A full
training run uses 200 pairs and 700 epochs; this demo trims both so it
finishes in a few minutes on a laptop.
"""

import numpy as np

from nsubdiv import (
    generate_dataset,
    loop_subdivide,
    neural_subdivide,
    normalize_unit_box,
    shapes,
    surface_distance,
    train,
)
from nsubdiv.selfparam import decimate

source, _ = normalize_unit_box(shapes.bumpy_sphere(3))
print("training shape: %d vertices (normalized to unit bounding box)"
      % source.n_vertices)

pairs = generate_dataset(source, count=10, min_v=120, max_v=220, levels=2, seed=42)
print("dataset: %d random coarsenings, %d-%d vertices"
      % (len(pairs), min(p.coarse.n_vertices for p in pairs),
         max(p.coarse.n_vertices for p in pairs)))

result = train(pairs, epochs=60, seed=0,
               progress=lambda e, l: e % 20 == 0 and print(
                   "  epoch %3d  loss %.3e" % (e, l)))
print("loss: %.3e -> %.3e" % (result.history[0], result.history[-1]))

print("\nheld-out comparison (distances in 1/1000 of the diagonal):")
diag = source.bbox_diagonal()
print("%6s %22s %22s" % ("case", "loop (M / H)", "learned (M / H)"))
for i in range(3):
    d = decimate(source, 240 + 30 * i, policy="random100", seed=7000 + i)
    loop_out = loop_subdivide(d.coarse, 2)
    neural_out = neural_subdivide(d.coarse, result.bundle, 2)[-1]
    rl = surface_distance(loop_out, source, samples=16000, seed=1)
    rn = surface_distance(neural_out, source, samples=16000, seed=1)
    print("%6d %10.3f / %8.3f %10.3f / %8.3f"
          % (i, 1000 * rl.mean_distance / diag, 1000 * rl.hausdorff / diag,
             1000 * rn.mean_distance / diag, 1000 * rn.hausdorff / diag))

print("\nthe learned modules transfer to other shapes, too:")
other = decimate(normalize_unit_box(shapes.ellipsoid(3))[0], 200,
                 policy="qslim", seed=5).coarse
out = neural_subdivide(other, result.bundle, 2)
print("ellipsoid coarsening %d -> %d -> %d vertices"
      % (other.n_vertices, out[0].n_vertices, out[1].n_vertices))
