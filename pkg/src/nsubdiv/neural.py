"""Half-flap feature machinery and the three learnable refinement modules.

A half-flap is a directed edge with its two incident triangles.  Its
canonical vertex order (source, dest, left-opposite, right-opposite) and
local orthonormal frame let a small shared MLP consume patch geometry in a
rotation- and translation-invariant encoding.  Three module types share
one parameter set each across every subdivision level:

* the initialization module lifts per-vertex differential quantities into
  a 32-dimensional feature (3 frame-derived components plus 29 latent),
* the vertex module displaces even vertices and refreshes their features,
* the edge module places each new odd vertex by a displacement from the
  edge midpoint.

Per-flap MLP outputs are pooled per vertex (or per undirected edge) by
averaging, after rotating the 3 displacement components back to global
coordinates; pooling always sums flaps in a fixed sorted order, so any
parallel schedule must reproduce the sequential result bit for bit.

Geometry enters the networks scaled by the reciprocal square root of the
input mesh's surface area.  That normalization is rotation- and
translation-invariant, keeps the feature magnitudes at the scale the
modules were trained for, and leaves the zero-parameter pipeline exactly
equal to midpoint refinement (displacements are exactly zero).

All forward and backward passes are written directly in numpy; the
backward pass returns exact gradients for the declared computation graph,
in which the local frames (and the feature scale) are treated as
constants of each step.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .mesh import HalfFlap, Mesh, MeshError, _halfedge_tables, midpoint_connectivity

FEATURE_DIM = 32
LATENT_DIM = 29
HIDDEN_DIM = 32
IN_INIT = 21          # 3 edge vectors + 4 differential-coordinate vectors
IN_STEP = 9 + 4 * FEATURE_DIM


@dataclass(frozen=True)
class VertexState:
    """Vertex position plus its 32-component feature vector."""

    position: np.ndarray
    feature: np.ndarray

    def __post_init__(self):
        if np.asarray(self.feature).shape != (FEATURE_DIM,):
            raise ValueError("feature must have length %d" % FEATURE_DIM)


# -------------------------------------------------------------------- MLPs

@dataclass
class MLPParams:
    """Fully connected in -> 32 -> 32 -> 32 network with ReLU hidden layers.

    The output layer is linear so displacement components are
    sign-unrestricted.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def in_dim(self):
        return self.w1.shape[1]

    @property
    def out_dim(self):
        return self.w3.shape[0]

    def items(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2),
                ("b2", self.b2), ("w3", self.w3), ("b3", self.b3)]

    def copy(self):
        return MLPParams(*(a.copy() for _, a in self.items()))

    @classmethod
    def zeros(cls, in_dim, hidden=HIDDEN_DIM, out_dim=FEATURE_DIM):
        return cls(
            np.zeros((hidden, in_dim)), np.zeros(hidden),
            np.zeros((hidden, hidden)), np.zeros(hidden),
            np.zeros((out_dim, hidden)), np.zeros(out_dim),
        )

    @classmethod
    def random(cls, in_dim, rng, hidden=HIDDEN_DIM, out_dim=FEATURE_DIM):
        """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out))."""
        def layer(n_out, n_in):
            a = np.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-a, a, size=(n_out, n_in))

        return cls(
            layer(hidden, in_dim), np.zeros(hidden),
            layer(hidden, hidden), np.zeros(hidden),
            layer(out_dim, hidden), np.zeros(out_dim),
        )


def _mlp_forward(params, x, masks=None):
    z1 = x @ params.w1.T + params.b1
    a1 = np.maximum(z1, 0.0) if masks is None else z1 * masks[0]
    z2 = a1 @ params.w2.T + params.b2
    a2 = np.maximum(z2, 0.0) if masks is None else z2 * masks[1]
    y = a2 @ params.w3.T + params.b3
    return y, (x, z1, a1, z2, a2)


def _mlp_backward(params, tape, dy):
    x, z1, a1, z2, a2 = tape
    dw3 = dy.T @ a2
    db3 = dy.sum(axis=0)
    da2 = dy @ params.w3
    dz2 = da2 * (z2 > 0.0)  # subgradient at 0 is 0
    dw2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ params.w2
    dz1 = da1 * (z1 > 0.0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    dx = dz1 @ params.w1
    return dx, MLPParams(dw1, db1, dw2, db2, dw3, db3)


def mlp_apply(params, x, grad_out=None):
    """Evaluate the MLP; optionally backpropagate an upstream gradient.

    ``x`` may be a single input vector or a batch (N, in_dim).  With
    ``grad_out`` given (same shape as the output), returns
    ``(y, param_grads, dx)`` with exact gradients.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != params.in_dim:
        raise ValueError("input length %d, expected %d" % (xb.shape[1], params.in_dim))
    y, tape = _mlp_forward(params, xb)
    if grad_out is None:
        return y[0] if single else y
    g = np.asarray(grad_out, dtype=float)
    gb = g[None, :] if single else g
    if gb.shape != y.shape:
        raise ValueError("grad_out shape %s, expected %s" % (gb.shape, y.shape))
    dx, grads = _mlp_backward(params, tape, gb)
    return (y[0], grads, dx[0]) if single else (y, grads, dx)


@dataclass
class NetworkBundle:
    """One parameter set per module type, shared across all levels."""

    init_net: MLPParams
    vertex_net: MLPParams
    edge_net: MLPParams

    @classmethod
    def zeros(cls):
        return cls(MLPParams.zeros(IN_INIT), MLPParams.zeros(IN_STEP),
                   MLPParams.zeros(IN_STEP))

    @classmethod
    def random(cls, seed=0):
        rng = np.random.Generator(np.random.PCG64(seed))
        return cls(
            MLPParams.random(IN_INIT, rng),
            MLPParams.random(IN_STEP, rng),
            MLPParams.random(IN_STEP, rng),
        )

    def copy(self):
        return NetworkBundle(self.init_net.copy(), self.vertex_net.copy(),
                             self.edge_net.copy())

    def modules(self):
        return [("I", self.init_net), ("V", self.vertex_net), ("E", self.edge_net)]

    def items(self):
        for mod_name, params in self.modules():
            for name, arr in params.items():
                yield "%s.%s" % (mod_name, name), arr

    def n_parameters(self):
        return sum(a.size for _, a in self.items())

    def check_dims(self):
        expect = {"I": IN_INIT, "V": IN_STEP, "E": IN_STEP}
        for name, p in self.modules():
            if p.in_dim != expect[name] or p.out_dim != FEATURE_DIM:
                raise ValueError("module %s has dimensions %dx%d, expected %dx%d"
                                 % (name, p.in_dim, p.out_dim, expect[name], FEATURE_DIM))


def bundle_zeros_like(bundle):
    return NetworkBundle(
        MLPParams.zeros(bundle.init_net.in_dim),
        MLPParams.zeros(bundle.vertex_net.in_dim),
        MLPParams.zeros(bundle.edge_net.in_dim),
    )


# ---------------------------------------------------------------- topology

class _SegScatter:
    """Deterministic scatter-add with a fixed summation order.

    Backed by a cached sparse matrix whose row structure pins the order in
    which contributions are accumulated, so repeated runs (and any
    parallel schedule honoring the contract) agree bit for bit.
    """

    def __init__(self, idx, n):
        idx = np.asarray(idx, dtype=np.int64)
        if np.bincount(idx, minlength=n).min() <= 0:
            raise ValueError("scatter index set must cover every target")
        self.matrix = sparse.csr_matrix(
            (np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx))
        )

    def add(self, values):
        return self.matrix @ values


class LevelTopology:
    """Flap tables of one connectivity level, in fixed sorted order.

    Flaps (directed half-edges with their canonical four vertices) are
    sorted by (source, dest) so per-vertex pooling reduces contiguous
    segments; ``edge_flap_pairs`` lists, per undirected edge, the two flap
    rows used by the edge module.  The precomputed ``_SegScatter`` tables
    make the backward pass's scatter-adds run in a fixed summation order.
    """

    def __init__(self, faces, n_vertices):
        faces = np.asarray(faces, dtype=np.int64)
        self.faces = faces
        self.n_vertices = int(n_vertices)
        src, dst, twin = _halfedge_tables(faces, n_vertices)
        h = np.arange(len(src))
        nxt = h - h % 3 + (h + 1) % 3
        lopp = dst[nxt]
        ropp = lopp[twin]
        left_face = h // 3
        right_face = twin // 3

        order = np.lexsort((dst, src))
        self.flap_src = src[order]
        self.flap_dst = dst[order]
        self.flap_lopp = lopp[order]
        self.flap_ropp = ropp[order]
        self.flap_left = left_face[order]
        self.flap_right = right_face[order]
        self.flap_verts = np.column_stack(
            [self.flap_src, self.flap_dst, self.flap_lopp, self.flap_ropp]
        )
        self.flap_targets = np.stack(
            [self.flap_dst, self.flap_lopp, self.flap_ropp], axis=1
        )
        self.valence = np.bincount(self.flap_src, minlength=n_vertices)
        self.seg_starts = np.concatenate([[0], np.cumsum(self.valence)[:-1]])

        self.edges, self.next_faces = midpoint_connectivity(faces, n_vertices)
        # rows (in sorted flap order) of the two half-edges of each edge
        rank = np.where(
            self.flap_src < self.flap_dst,
            np.searchsorted(
                self.edges[:, 0] * n_vertices + self.edges[:, 1],
                self.flap_src * n_vertices + self.flap_dst,
            ),
            np.searchsorted(
                self.edges[:, 0] * n_vertices + self.edges[:, 1],
                self.flap_dst * n_vertices + self.flap_src,
            ),
        )
        pair_order = np.lexsort((np.arange(len(rank)), rank))
        self.edge_flap_pairs = pair_order.reshape(-1, 2)
        self.eorder = self.edge_flap_pairs.ravel()
        self.n_flaps = len(self.flap_src)
        self.n_edges = len(self.edges)

        def pos_scatter(rows):
            return _SegScatter(
                np.concatenate([self.flap_dst[rows], self.flap_lopp[rows],
                                self.flap_ropp[rows], self.flap_src[rows]]),
                n_vertices,
            )

        all_rows = np.arange(self.n_flaps)
        self.v_pos_scatter = pos_scatter(all_rows)
        self.v_feat_scatter = _SegScatter(self.flap_verts.ravel(), n_vertices)
        self.e_pos_scatter = pos_scatter(self.eorder)
        self.e_feat_scatter = _SegScatter(self.flap_verts[self.eorder].ravel(), n_vertices)
        self.mid_scatter = _SegScatter(self.edges.ravel(), n_vertices)
        self.src_scatter = _SegScatter(self.flap_src, n_vertices)

    @classmethod
    def of_mesh(cls, mesh):
        return cls(mesh.faces, mesh.n_vertices)


class SubdivisionPlan:
    """Cached per-level topologies for repeated forward/backward passes."""

    def __init__(self, faces, n_vertices, levels):
        self.topos = []
        f, v = np.asarray(faces, dtype=np.int64), int(n_vertices)
        for _ in range(levels):
            topo = LevelTopology(f, v)
            self.topos.append(topo)
            f = topo.next_faces
            v = v + topo.n_edges
        self.final_faces = f
        self.final_vertices = v

    @property
    def levels(self):
        return len(self.topos)


# ------------------------------------------------------------------ frames

def _face_normals(positions, faces):
    p = positions[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.maximum(norm, 1e-300)


def _flap_frames(positions, topo):
    """Right-handed orthonormal frames for every flap, rows = (x, y, z).

    x is the normalized edge direction, z the normalized mean of the two
    incident face normals (falling back to the left normal when they
    cancel), y their cross product; z is re-orthogonalized as x cross y.
    """
    fn = _face_normals(positions, topo.faces)
    x = positions[topo.flap_dst] - positions[topo.flap_src]
    x = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-300)
    z = fn[topo.flap_left] + fn[topo.flap_right]
    zlen = np.linalg.norm(z, axis=1, keepdims=True)
    fold = zlen[:, 0] < 1e-9
    if fold.any():
        z = np.where(fold[:, None], fn[topo.flap_left], z)
        zlen = np.linalg.norm(z, axis=1, keepdims=True)
    z = z / np.maximum(zlen, 1e-300)
    y = np.cross(z, x)
    y = y / np.maximum(np.linalg.norm(y, axis=1, keepdims=True), 1e-300)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=1)


def half_flap_frame(mesh, halfedge):
    """Canonical ``HalfFlap`` of one directed half-edge of ``mesh``."""
    h = int(halfedge)
    src = int(mesh.halfedge_src[h])
    dst = int(mesh.halfedge_dst[h])
    if np.linalg.norm(mesh.vertices[dst] - mesh.vertices[src]) <= 0.0:
        raise MeshError("degenerate half-edge %d: zero length" % h)
    lopp = int(mesh.halfedge_dst[mesh.next_halfedge(h)])
    ht = int(mesh.twin[h])
    ropp = int(mesh.halfedge_dst[mesh.next_halfedge(ht)])

    fn = mesh.face_normals()
    x = mesh.vertices[dst] - mesh.vertices[src]
    x = x / np.linalg.norm(x)
    z = fn[h // 3] + fn[ht // 3]
    if np.linalg.norm(z) < 1e-9:
        z = fn[h // 3]
    z = z / np.linalg.norm(z)
    y = np.cross(z, x)
    y = y / np.linalg.norm(y)
    z = np.cross(x, y)
    frame = np.stack([x, y, z])
    return HalfFlap(src, dst, lopp, ropp, frame, np.array(mesh.vertices[src]))


# ----------------------------------------------------------- forward pass

def _rotate_local(frames, vectors):
    return (vectors[:, None, :] @ frames.transpose(0, 2, 1))[:, 0]


def _rotate_global(frames, vectors):
    return (vectors[:, None, :] @ frames)[:, 0]


def _pool_vertex(topo, g):
    return topo.src_scatter.add(g) / topo.valence[:, None]


def _unpool_vertex(topo, dpooled):
    return np.repeat(dpooled / topo.valence[:, None], topo.valence, axis=0)


def _gather_step_inputs(topo, frames, positions, features, scale, rows=None):
    """Build the 137-vector flap inputs: local edge vectors + 4 features."""
    if rows is None:
        rows = slice(None)
    src = topo.flap_src[rows]
    ev = (positions[topo.flap_targets[rows]] - positions[src][:, None, :]) * scale
    n = len(ev)
    rt = frames.transpose(0, 2, 1)
    x = np.empty((n, 9 + 4 * FEATURE_DIM))
    x[:, :9] = (ev @ rt).reshape(n, 9)
    feats = features[topo.flap_verts[rows]]
    x[:, 9:] = feats.reshape(n, 4 * FEATURE_DIM)
    local3 = feats[..., :3] @ rt
    for slot in range(4):
        x[:, 9 + FEATURE_DIM * slot: 12 + FEATURE_DIM * slot] = local3[:, slot]
    return x


def _scatter_step_inputs(topo, frames, dx, scale, kind, dP, dF):
    """Reverse of ``_gather_step_inputs`` into position/feature gradients."""
    n = len(dx)
    dlocal = dx[:, :9].reshape(n, 3, 3)
    dworld = (dlocal @ frames) * scale
    pos_vals = np.concatenate(
        [dworld[:, 0], dworld[:, 1], dworld[:, 2], -dworld.sum(axis=1)], axis=0
    )
    dfeat = dx[:, 9:].reshape(n, 4, FEATURE_DIM)
    dworld3 = dfeat[..., :3] @ frames
    feat_vals = np.concatenate([dworld3, dfeat[..., 3:]], axis=2).reshape(4 * n, FEATURE_DIM)
    if kind == "v":
        dP += topo.v_pos_scatter.add(pos_vals)
        dF += topo.v_feat_scatter.add(feat_vals)
    else:
        dP += topo.e_pos_scatter.add(pos_vals)
        dF += topo.e_feat_scatter.add(feat_vals)


@dataclass
class _StepTape:
    frames: np.ndarray
    mlp_tape: tuple
    rows: object = None


@dataclass
class _LevelTape:
    topo: LevelTopology
    positions_in: np.ndarray
    positions_mid: np.ndarray
    v_tape: _StepTape
    e_tape: _StepTape


@dataclass
class ForwardState:
    """Positions/features per level plus the tapes for the backward pass."""

    scale: float
    init_tape: _StepTape
    features0: np.ndarray
    level_tapes: list
    positions: list      # per level: (V_l, 3) predicted vertex positions
    features: list

    def min_hidden_magnitude(self):
        """Smallest |pre-activation| seen anywhere (finite-difference safety)."""
        vals = [np.abs(self.init_tape.mlp_tape[1]).min(),
                np.abs(self.init_tape.mlp_tape[3]).min()]
        for lt in self.level_tapes:
            for tape in (lt.v_tape, lt.e_tape):
                vals.append(np.abs(tape.mlp_tape[1]).min())
                vals.append(np.abs(tape.mlp_tape[3]).min())
        return float(min(vals))


def _init_step(bundle, topo, positions, scale, static=None, masks=None):
    if static is None or "init_x" not in static:
        frames = _flap_frames(positions, topo)
        ring_mean = _pool_vertex(topo, positions[topo.flap_dst])
        diff = (positions - ring_mean) * scale
        ev = (positions[topo.flap_targets] - positions[topo.flap_src][:, None, :]) * scale
        n = len(ev)
        rt = frames.transpose(0, 2, 1)
        x = np.empty((n, IN_INIT))
        x[:, :9] = (ev @ rt).reshape(n, 9)
        x[:, 9:] = (diff[topo.flap_verts] @ rt).reshape(n, 12)
        if static is not None:
            static["init_x"] = x
            static["init_frames"] = frames
    else:
        x = static["init_x"]
        frames = static["init_frames"]
    y, tape = _mlp_forward(bundle.init_net, x, masks)
    g = np.concatenate([_rotate_global(frames, y[:, :3]), y[:, 3:]], axis=1)
    features = _pool_vertex(topo, g)
    return features, _StepTape(frames, tape)


def _vertex_step(bundle, topo, positions, features, scale, frames=None, masks=None):
    if frames is None:
        frames = _flap_frames(positions, topo)
    x = _gather_step_inputs(topo, frames, positions, features, scale)
    y, tape = _mlp_forward(bundle.vertex_net, x, masks)
    g = np.concatenate([_rotate_global(frames, y[:, :3]), y[:, 3:]], axis=1)
    pooled = _pool_vertex(topo, g)
    new_positions = positions + pooled[:, :3] / scale
    return new_positions, pooled, _StepTape(frames, tape)


def _edge_step(bundle, topo, positions, features, scale, frames=None, masks=None):
    rows = topo.eorder
    if frames is None:
        frames = _flap_frames(positions, topo)[rows]
    x = _gather_step_inputs(topo, frames, positions, features, scale, rows=rows)
    y, tape = _mlp_forward(bundle.edge_net, x, masks)
    g = np.concatenate([_rotate_global(frames, y[:, :3]), y[:, 3:]], axis=1)
    pooled = g.reshape(-1, 2, FEATURE_DIM).mean(axis=1)
    mid = (positions[topo.edges[:, 0]] + positions[topo.edges[:, 1]]) * 0.5
    odd_positions = mid + pooled[:, :3] / scale
    return odd_positions, pooled, _StepTape(frames, tape, rows)


class NeuralForward:
    """Forward/backward driver bound to one coarse mesh and plan.

    Holds the static per-mesh inputs (initialization features, base
    frames) so repeated passes during training only redo the
    parameter-dependent work.
    """

    def __init__(self, plan, base_positions, scale=None):
        self.plan = plan
        self.base_positions = np.asarray(base_positions, dtype=float)
        if scale is None:
            scale = feature_scale(self.base_positions, plan.topos[0].faces)
        self.scale = float(scale)
        self._static = {}

    def run(self, bundle, levels=None, graph=None):
        """Run the forward pass; returns a ``ForwardState``.

        ``graph`` may hold frames and ReLU activation masks captured from
        a previous state (see ``captured_graph``); the pass then evaluates
        exactly the declared computation graph in which frames are
        constants and the activation pattern is fixed, which is the
        function the analytic backward differentiates.
        """
        levels = self.plan.levels if levels is None else levels
        if levels > self.plan.levels:
            raise ValueError("plan was built for %d levels" % self.plan.levels)
        scale = self.scale
        init_masks = graph["init"][1] if graph is not None else None
        features, init_tape = _init_step(
            bundle, self.plan.topos[0], self.base_positions, scale, self._static,
            masks=init_masks,
        )
        features0 = features
        positions = self.base_positions
        level_tapes = []
        out_positions = []
        out_features = []
        for l in range(levels):
            topo = self.plan.topos[l]
            if graph is not None:
                (v_frames, v_masks), (e_frames, e_masks) = graph["levels"][l]
            else:
                v_frames = v_masks = e_frames = e_masks = None
            pos_in = positions
            pos_mid, feat_mid, v_tape = _vertex_step(
                bundle, topo, positions, features, scale, frames=v_frames, masks=v_masks
            )
            odd_pos, odd_feat, e_tape = _edge_step(
                bundle, topo, pos_mid, feat_mid, scale, frames=e_frames, masks=e_masks
            )
            positions = np.concatenate([pos_mid, odd_pos], axis=0)
            features = np.concatenate([feat_mid, odd_feat], axis=0)
            level_tapes.append(_LevelTape(topo, pos_in, pos_mid, v_tape, e_tape))
            out_positions.append(positions)
            out_features.append(features)
        return ForwardState(scale, init_tape, features0, level_tapes,
                            out_positions, out_features)

    @staticmethod
    def captured_graph(state):
        """Frames and activation masks of a state, for frozen re-runs."""
        def cap(tape):
            _, z1, _, z2, _ = tape.mlp_tape
            return tape.frames, (z1 > 0.0, z2 > 0.0)

        return {
            "init": cap(state.init_tape),
            "levels": [(cap(lt.v_tape), cap(lt.e_tape)) for lt in state.level_tapes],
        }

    def backward(self, bundle, state, position_grads):
        """Exact parameter gradients for upstream position gradients.

        ``position_grads`` holds one array per forward level (the partial
        derivative of the loss with respect to that level's vertex
        positions).  Local frames are constants of the graph.
        """
        scale = state.scale
        grads = bundle_zeros_like(bundle)
        L = len(state.level_tapes)
        dP = np.array(position_grads[L - 1], dtype=float)
        dF = np.zeros((len(dP), FEATURE_DIM))
        for l in range(L - 1, -1, -1):
            lt = state.level_tapes[l]
            topo = lt.topo
            n_even = topo.n_vertices
            dP_even, dP_odd = dP[:n_even].copy(), dP[n_even:]
            dF_even, dF_odd = dF[:n_even].copy(), dF[n_even:]

            # edge step backward
            dpooled = dF_odd.copy()
            dpooled[:, :3] += dP_odd / scale
            dP_even += topo.mid_scatter.add(np.repeat(0.5 * dP_odd, 2, axis=0))
            dg = np.repeat(dpooled * 0.5, 2, axis=0)
            et = lt.e_tape
            dy = np.concatenate([_rotate_local(et.frames, dg[:, :3]), dg[:, 3:]], axis=1)
            dx, g_edge = _mlp_backward(bundle.edge_net, et.mlp_tape, dy)
            _accumulate(grads.edge_net, g_edge)
            _scatter_step_inputs(topo, et.frames, dx, scale, "e", dP_even, dF_even)

            # vertex step backward
            dpooled = dF_even
            dpooled[:, :3] += dP_even / scale
            dg = _unpool_vertex(topo, dpooled)
            vt = lt.v_tape
            dy = np.concatenate([_rotate_local(vt.frames, dg[:, :3]), dg[:, 3:]], axis=1)
            dx, g_vert = _mlp_backward(bundle.vertex_net, vt.mlp_tape, dy)
            _accumulate(grads.vertex_net, g_vert)
            dP_in = dP_even  # position pass-through of the vertex step
            dF_in = np.zeros((n_even, FEATURE_DIM))
            _scatter_step_inputs(topo, vt.frames, dx, scale, "v", dP_in, dF_in)

            if l > 0:
                dP = dP_in + position_grads[l - 1]
                dF = dF_in
            else:
                dF = dF_in

        # initialization backward (base positions are constants)
        dpooled = dF
        topo0 = self.plan.topos[0]
        dg = _unpool_vertex(topo0, dpooled)
        it = state.init_tape
        dy = np.concatenate([_rotate_local(it.frames, dg[:, :3]), dg[:, 3:]], axis=1)
        _, g_init = _mlp_backward(bundle.init_net, it.mlp_tape, dy)
        _accumulate(grads.init_net, g_init)
        return grads


def _accumulate(dst_params, add_params):
    for (_, a), (_, b) in zip(dst_params.items(), add_params.items()):
        a += b


def feature_scale(positions, faces):
    """Reciprocal square root of total surface area.

    Rotation- and translation-invariant normalization for the network
    inputs; meshes prepared with ``normalize_unit_box`` land close to 1.
    """
    p = np.asarray(positions, dtype=float)[np.asarray(faces, dtype=np.int64)]
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1).sum()
    if area <= 0.0:
        raise MeshError("degenerate mesh: zero surface area")
    return 1.0 / np.sqrt(area)


# -------------------------------------------------------------- public ops

def _states_to_arrays(states):
    p = np.array([s.position for s in states], dtype=float)
    f = np.array([s.feature for s in states], dtype=float)
    return p, f


def _arrays_to_states(p, f):
    return [VertexState(p[i].copy(), f[i].copy()) for i in range(len(p))]


def init_features(mesh, bundle, scale=None):
    """Initial per-vertex states: positions plus pooled flap features.

    Every outgoing flap of a vertex feeds the initialization module with
    its three local edge vectors and the four corner differential
    coordinates; outputs are pooled by averaging (valence-n vertices pool
    n flap outputs).  Positions are unchanged by this step.
    """
    bundle.check_dims()
    topo = LevelTopology.of_mesh(mesh)
    if scale is None:
        scale = feature_scale(mesh.vertices, mesh.faces)
    features, _ = _init_step(bundle, topo, mesh.vertices, scale)
    return _arrays_to_states(np.array(mesh.vertices), features)


def step_vertex(mesh, states, bundle, scale=None):
    """Displace even vertices and refresh their features."""
    bundle.check_dims()
    topo = LevelTopology.of_mesh(mesh)
    p, f = _states_to_arrays(states)
    if scale is None:
        scale = feature_scale(p, mesh.faces)
    new_p, pooled, _ = _vertex_step(bundle, topo, p, f, scale)
    return _arrays_to_states(new_p, pooled)


def step_edge(mesh, states, bundle, scale=None):
    """Per-edge odd-vertex states: midpoint plus pooled displacement.

    The edge module runs on both directed flaps of every undirected edge
    and the two outputs are averaged, so the result does not depend on
    edge orientation enumeration.
    """
    bundle.check_dims()
    topo = LevelTopology.of_mesh(mesh)
    p, f = _states_to_arrays(states)
    if scale is None:
        scale = feature_scale(p, mesh.faces)
    odd_p, odd_f, _ = _edge_step(bundle, topo, p, f, scale)
    return _arrays_to_states(odd_p, odd_f)


def neural_subdivide(mesh, bundle, levels):
    """Recursively refine ``mesh``; returns one ``Mesh`` per level.

    Topology follows midpoint (1-to-4) refinement exactly; geometry comes
    from the learned modules.  With an all-zero bundle the output equals
    plain midpoint subdivision bit for bit.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    bundle.check_dims()
    plan = SubdivisionPlan(mesh.faces, mesh.n_vertices, levels)
    fwd = NeuralForward(plan, mesh.vertices)
    state = fwd.run(bundle)
    meshes = []
    for l in range(levels):
        meshes.append(Mesh(state.positions[l], plan.topos[l].next_faces))
    return meshes


# ------------------------------------------------------------- checkpoints

def save_checkpoint(path, bundle, levels=2, source_scale=1.0,
                    source_center=(0.0, 0.0, 0.0)):
    """Write an ``NSD 1`` checkpoint: dims, normalization, all matrices."""
    bundle.check_dims()
    center = np.asarray(source_center, dtype=float)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("NSD 1\n")
        fh.write("levels %d\n" % levels)
        fh.write("feature_scale unit-area\n")
        fh.write("source_scale %r\n" % float(source_scale))
        fh.write("source_center %r %r %r\n" % tuple(float(x) for x in center))
        for name, params in bundle.modules():
            fh.write("module %s %d %d %d %d\n"
                     % (name, params.in_dim, HIDDEN_DIM, HIDDEN_DIM, params.out_dim))
        for name, arr in bundle.items():
            mat = np.atleast_2d(arr)
            fh.write("matrix %s %d %d\n" % (name, mat.shape[0], mat.shape[1]))
            for row in mat:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_checkpoint(path):
    """Read an ``NSD 1`` checkpoint; returns ``(bundle, meta)``."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "NSD 1":
        raise ValueError("%s: not an NSD 1 checkpoint" % path)
    meta = {}
    dims = {}
    arrays = {}
    at = 1
    while at < len(lines):
        parts = lines[at].split()
        if parts[0] == "levels":
            meta["levels"] = int(parts[1])
            at += 1
        elif parts[0] == "feature_scale":
            meta["feature_scale"] = parts[1]
            at += 1
        elif parts[0] == "source_scale":
            meta["source_scale"] = float(parts[1])
            at += 1
        elif parts[0] == "source_center":
            meta["source_center"] = np.array(parts[1:4], dtype=float)
            at += 1
        elif parts[0] == "module":
            dims[parts[1]] = [int(x) for x in parts[2:6]]
            at += 1
        elif parts[0] == "matrix":
            name = parts[1]
            rows, cols = int(parts[2]), int(parts[3])
            data = np.array(
                [[float(x) for x in lines[at + 1 + r].split()] for r in range(rows)]
            )
            arrays[name] = data.reshape(rows, cols)
            at += 1 + rows
        else:
            raise ValueError("%s: unrecognized record %r" % (path, parts[0]))

    def module(name):
        return MLPParams(
            arrays["%s.w1" % name], arrays["%s.b1" % name].ravel(),
            arrays["%s.w2" % name], arrays["%s.b2" % name].ravel(),
            arrays["%s.w3" % name], arrays["%s.b3" % name].ravel(),
        )

    bundle = NetworkBundle(module("I"), module("V"), module("E"))
    bundle.check_dims()
    return bundle, meta
