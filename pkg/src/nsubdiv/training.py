"""Dataset synthesis, the cross-level reconstruction loss, and training.

Training data is self-supervised: a high-resolution source mesh is
randomly decimated many times (each time with a bijective map back to the
source), the coarse result is midpoint-refined level by level, and every
refined vertex is pushed through the map to obtain its exact target
position on the source surface.  The loss is the mean squared distance
between predicted and target positions, averaged over vertices and over
levels.

Everything here is deterministic given its seeds: datasets serialize to
byte-identical directories and repeated training runs produce
byte-identical checkpoints (the forward/backward reductions run in fixed
sorted order).
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .mesh import (
    BarycentricPoint,
    Mesh,
    load_obj,
    mesh_digest,
    midpoint_connectivity,
    obj_dumps,
)
from .neural import (
    NetworkBundle,
    NeuralForward,
    SubdivisionPlan,
    bundle_zeros_like,
)
from .selfparam import decimate
from . import shapes as _shapes


@dataclass
class TrainingPair:
    """One coarse mesh with per-level target positions on the source.

    ``targets[l]`` holds one 3-vector per vertex of the level ``l + 1``
    midpoint-refined connectivity.  ``fine_preimages[l]`` records each
    target's barycentric pre-image on the source mesh (``(faces, coords)``
    arrays), which reconstructs the target positions exactly.
    """

    coarse: Mesh
    targets: list
    source_id: str = ""
    seed: int = 0
    fine_preimages: list = None
    _forward: NeuralForward = field(default=None, repr=False, compare=False)

    @property
    def levels(self):
        return len(self.targets)

    def forward_driver(self, levels=None):
        """Cached forward/backward driver for this coarse mesh."""
        levels = self.levels if levels is None else levels
        if self._forward is None or self._forward.plan.levels < levels:
            plan = SubdivisionPlan(self.coarse.faces, self.coarse.n_vertices, levels)
            self._forward = NeuralForward(plan, self.coarse.vertices)
        return self._forward


# ----------------------------------------------------- barycentric algebra

def _vertex_corner_points(mesh):
    """Per-vertex barycentric points: a corner of the lowest incident face."""
    low = np.full(mesh.n_vertices, mesh.n_faces, dtype=np.int64)
    fidx = np.repeat(np.arange(mesh.n_faces), 3)
    np.minimum.at(low, mesh.faces.ravel(), fidx)
    faces = low
    coords = np.zeros((mesh.n_vertices, 3))
    corner = np.argmax(mesh.faces[faces] == np.arange(mesh.n_vertices)[:, None], axis=1)
    coords[np.arange(mesh.n_vertices), corner] = 1.0
    return faces, coords


def _combine_midpoint(mesh, fa, ca, fb, cb):
    """Midpoint of two barycentric points known to share a closed face."""
    if fa == fb:
        return fa, 0.5 * (ca + cb)
    tri_a = mesh.faces[fa]
    tri_b = mesh.faces[fb]
    sup = {}
    for tri, c in ((tri_a, ca), (tri_b, cb)):
        for v, w in zip(tri, c):
            if w > 1e-12:
                sup.setdefault(int(v), 0.0)
    needed = sorted(sup)
    for f in sorted(mesh.vertex_faces(needed[0])):
        tri = mesh.faces[f]
        if all(v in tri for v in needed):
            out = np.zeros(3)
            for tri_src, c in ((tri_a, ca), (tri_b, cb)):
                for v, w in zip(tri_src, c):
                    if w > 1e-12:
                        out[np.nonzero(tri == v)[0][0]] += 0.5 * w
            return int(f), out
    raise ValueError("barycentric points do not share a face")


def _refine_base_points(mesh, faces_arr, coords_arr, level_faces, n_level_vertices):
    """Base points of the next midpoint-refinement level.

    Even vertices keep their pre-image on the coarse mesh; each odd
    vertex gets the barycentric midpoint of its parent edge's endpoints,
    expressed on a common coarse face.
    """
    edges, next_faces = midpoint_connectivity(level_faces, n_level_vertices)
    a, b = edges[:, 0], edges[:, 1]
    fa, fb = faces_arr[a], faces_arr[b]
    ca, cb = coords_arr[a], coords_arr[b]
    odd_faces = np.empty(len(edges), dtype=np.int64)
    odd_coords = np.empty((len(edges), 3))
    same = fa == fb
    odd_faces[same] = fa[same]
    odd_coords[same] = 0.5 * (ca[same] + cb[same])
    for r in np.nonzero(~same)[0]:
        odd_faces[r], odd_coords[r] = _combine_midpoint(
            mesh, int(fa[r]), ca[r], int(fb[r]), cb[r]
        )
    return (
        np.concatenate([faces_arr, odd_faces]),
        np.concatenate([coords_arr, odd_coords]),
        next_faces,
    )


def targets_from_map(bijective_map, levels):
    """Per-level target positions (and fine pre-images) for a coarse mesh.

    Midpoint-refines the coarse connectivity ``levels`` times; every
    refined vertex's barycentric pre-image on the coarse mesh is pushed
    through the bijective map to a point on the source surface.
    """
    coarse = bijective_map.coarse
    faces_arr, coords_arr = _vertex_corner_points(coarse)
    level_faces = coarse.faces
    n_vertices = coarse.n_vertices
    targets = []
    preimages = []
    for _ in range(levels):
        faces_arr, coords_arr, level_faces = _refine_base_points(
            coarse, faces_arr, coords_arr, level_faces, n_vertices
        )
        n_vertices = len(faces_arr)
        ff, cc, pos = bijective_map.map_points(faces_arr, coords_arr)
        targets.append(pos)
        preimages.append((ff, cc))
    return targets, preimages


# ------------------------------------------------------- dataset synthesis

def generate_dataset(source, count=200, min_v=150, max_v=300, levels=2, seed=0,
                     max_retries=5):
    """Random-decimation training pairs with map-derived targets.

    ``source`` is a single mesh or a list of meshes; with several sources
    the pair budget is split evenly between them.  Each pair draws a
    target vertex count uniformly in ``[min_v, max_v]``, decimates with
    the random-candidate policy, and reads its targets off the bijective
    map.  Deterministic given ``seed``; pairs whose map fails validation
    are regenerated with a fresh derived seed (up to ``max_retries``).
    """
    sources = source if isinstance(source, (list, tuple)) else [source]
    share = [count // len(sources)] * len(sources)
    for i in range(count % len(sources)):
        share[i] += 1
    pairs = []
    for s_idx, src in enumerate(sources):
        if min_v >= src.n_vertices:
            raise ValueError("source mesh has too few vertices for min_v")
        src_id = mesh_digest(src)[:12]
        for i in range(share[s_idx]):
            pair = None
            for retry in range(max_retries):
                ss = np.random.SeedSequence((seed, s_idx, i, retry))
                pair_seed = int(ss.generate_state(1)[0])
                rng = np.random.Generator(np.random.PCG64(ss))
                target_v = int(rng.integers(min_v, max_v + 1))
                result = decimate(src, target_v, policy="random100", seed=pair_seed)
                if not result.reached_target:
                    continue
                try:
                    targets, preimages = targets_from_map(result.bijective_map, levels)
                except Exception:
                    continue
                pair = TrainingPair(result.coarse, targets, src_id, pair_seed, preimages)
                break
            if pair is None:
                raise RuntimeError(
                    "could not generate a valid pair after %d retries" % max_retries
                )
            pairs.append(pair)
    return pairs


def save_dataset(pairs, out_dir, seed=0, source_digest="", extra=None):
    """Write pairs as ``pair_%04d/coarse.obj`` + per-level target files."""
    os.makedirs(out_dir, exist_ok=True)
    for i, pair in enumerate(pairs):
        pdir = os.path.join(out_dir, "pair_%04d" % i)
        os.makedirs(pdir, exist_ok=True)
        with open(os.path.join(pdir, "coarse.obj"), "w", newline="\n") as fh:
            fh.write(obj_dumps(pair.coarse))
        for l, t in enumerate(pair.targets):
            with open(os.path.join(pdir, "targets_L%d.txt" % (l + 1)), "w",
                      newline="\n") as fh:
                for x, y, z in t + 0.0:
                    fh.write("%r %r %r\n" % (float(x), float(y), float(z)))
    lines = [
        "seed %d" % seed,
        "source %s" % source_digest,
        "pairs %d" % len(pairs),
        "levels %d" % (pairs[0].levels if pairs else 0),
    ]
    for key in sorted(extra or {}):
        lines.append("%s %s" % (key, extra[key]))
    with open(os.path.join(out_dir, "manifest.txt"), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(data_dir):
    """Read back a dataset directory written by ``save_dataset``."""
    pairs = []
    i = 0
    while True:
        pdir = os.path.join(data_dir, "pair_%04d" % i)
        if not os.path.isdir(pdir):
            break
        coarse = load_obj(os.path.join(pdir, "coarse.obj"))
        targets = []
        l = 1
        while os.path.exists(os.path.join(pdir, "targets_L%d.txt" % l)):
            targets.append(np.loadtxt(os.path.join(pdir, "targets_L%d.txt" % l)))
            l += 1
        pairs.append(TrainingPair(coarse, targets))
        i += 1
    if not pairs:
        raise FileNotFoundError("no pair_0000 directory under %s" % data_dir)
    return pairs


# -------------------------------------------------------------------- loss

def loss_l2_levels(predicted, pair):
    """Mean-over-levels, mean-per-vertex squared distance to the targets.

    Returns ``(loss, grads)`` where ``grads[l]`` is the derivative with
    respect to the level-``l`` predicted positions.
    """
    if len(predicted) != pair.levels:
        raise ValueError("expected %d levels, got %d" % (pair.levels, len(predicted)))
    n_levels = len(predicted)
    loss = 0.0
    grads = []
    for pred, target in zip(predicted, pair.targets):
        pred = np.asarray(pred, dtype=float)
        if pred.shape != target.shape:
            raise ValueError("prediction shape %s does not match targets %s"
                             % (pred.shape, target.shape))
        diff = pred - target
        loss += np.mean(np.sum(diff * diff, axis=1))
        grads.append(2.0 * diff / (len(diff) * n_levels))
    return loss / n_levels, grads


# -------------------------------------------------------------------- ADAM

@dataclass
class AdamState:
    """Bias-corrected ADAM moment accumulators shaped like a bundle."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_bundle(cls, bundle, lr=0.002):
        m = {name: np.zeros_like(arr) for name, arr in bundle.items()}
        v = {name: np.zeros_like(arr) for name, arr in bundle.items()}
        return cls(m, v, lr=lr)


def adam_step(state, bundle, grads):
    """One bias-corrected ADAM update, in place on ``bundle``.

    Non-finite gradients reject the step (parameters and moments are left
    untouched); returns False in that case.
    """
    pairs = list(zip(bundle.items(), grads.items()))
    for (_, _), (_, g) in pairs:
        if not np.all(np.isfinite(g)):
            return False
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for (name, arr), (_, g) in pairs:
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        arr -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


# ------------------------------------------------------------------- train

@dataclass
class TrainResult:
    bundle: NetworkBundle
    history: list
    diverged: bool = False
    rejected_steps: int = 0


def train(dataset, epochs=700, seed=0, lr=0.002, levels=None, bundle=None,
          checkpoint_path=None, checkpoint_every=100, progress=None):
    """Optimize the three modules on a dataset of training pairs.

    One ADAM update per pair, pairs shuffled each epoch with a seeded
    generator.  ``history`` records the mean pair loss per epoch.  If the
    loss turns non-finite the run aborts and returns the last epoch's
    parameters with ``diverged=True``.  ``checkpoint_path`` enables
    periodic checkpoints (every ``checkpoint_every`` epochs) via
    ``neural.save_checkpoint``.
    """
    from .neural import save_checkpoint

    if bundle is None:
        bundle = NetworkBundle.random(seed)
    else:
        bundle = bundle.copy()
    if levels is None:
        levels = min(p.levels for p in dataset) if dataset else 2
    for p in dataset:
        if p.levels < levels:
            raise ValueError("dataset pair has only %d target levels" % p.levels)

    rng = np.random.Generator(np.random.PCG64(seed))
    adam = AdamState.for_bundle(bundle, lr=lr)
    history = []
    rejected = 0
    last_good = bundle.copy()
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for idx in order:
            pair = dataset[idx]
            fwd = pair.forward_driver(levels)
            state = fwd.run(bundle, levels=levels)
            loss, grads_pos = loss_l2_levels(state.positions, _sliced(pair, levels))
            if not np.isfinite(loss):
                return TrainResult(last_good, history, diverged=True,
                                   rejected_steps=rejected)
            grads = fwd.backward(bundle, state, grads_pos)
            if not adam_step(adam, bundle, grads):
                rejected += 1
            total += loss
        history.append(total / len(dataset))
        last_good = bundle.copy()
        if progress is not None:
            progress(epoch, history[-1])
        if checkpoint_path and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, bundle, levels=levels)
    return TrainResult(bundle, history, diverged=False, rejected_steps=rejected)


def _sliced(pair, levels):
    if levels == pair.levels:
        return pair
    return TrainingPair(pair.coarse, pair.targets[:levels], pair.source_id, pair.seed)


# -------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_error: float
    loss: float
    n_parameters: int
    seed: int

    def __str__(self):
        return ("gradcheck: max relative error %.3e over %d parameters "
                "(loss %.6f, seed %d)"
                % (self.max_rel_error, self.n_parameters, self.loss, self.seed))


def grad_check(seed=0, h=1e-5, levels=2):
    """Compare analytic full-pipeline gradients to central differences.

    Builds a noised icosahedron, a random bundle, and synthetic per-level
    targets, then sweeps every parameter of the three modules.  The
    finite-difference evaluations re-run the declared computation graph
    (frames and ReLU activation patterns frozen at the reference point;
    central differences are meaningless across an activation kink).
    Relative error uses ``|ga - fd| / max(|ga|, |fd|, 1e-5)``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    base = _shapes.icosahedron()
    mesh = Mesh(base.vertices + 0.05 * rng.normal(size=base.vertices.shape), base.faces)
    bundle = NetworkBundle.random(seed)
    plan = SubdivisionPlan(mesh.faces, mesh.n_vertices, levels)
    fwd = NeuralForward(plan, mesh.vertices)

    targets = []
    n_v = mesh.n_vertices
    for topo in plan.topos:
        n_v += topo.n_edges
        targets.append(rng.normal(scale=0.5, size=(n_v, 3)))
    pair = TrainingPair(mesh, targets)

    ref = fwd.run(bundle)
    graph = NeuralForward.captured_graph(ref)
    loss, grads_pos = loss_l2_levels(ref.positions, pair)
    analytic = fwd.backward(bundle, ref, grads_pos)

    def loss_at():
        st = fwd.run(bundle, graph=graph)
        return loss_l2_levels(st.positions, pair)[0]

    worst = 0.0
    analytic_by_name = dict(analytic.items())
    for name, arr in bundle.items():
        flat = arr.ravel()
        ga = analytic_by_name[name].ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = loss_at()
            flat[i] = old - h
            lm = loss_at()
            flat[i] = old
            fd = (lp - lm) / (2.0 * h)
            rel = abs(ga[i] - fd) / max(abs(ga[i]), abs(fd), 1e-5)
            if rel > worst:
                worst = rel
    return GradCheckReport(worst, float(loss), bundle.n_parameters(), seed)
