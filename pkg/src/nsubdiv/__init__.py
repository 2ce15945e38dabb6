"""Learned adaptive triangle-mesh subdivision.

A numpy/scipy toolkit that decimates triangle meshes while building a
bijective coarse-to-fine surface map, synthesizes self-supervised
training data from that map, trains small shared neural modules that
subdivide coarse meshes adaptively, and evaluates the results against
classic subdivision baselines.
"""

from .mesh import (
    BarycentricPoint,
    HalfFlap,
    Mesh,
    MeshError,
    SimilarityTransform,
    check_link_condition,
    load_obj,
    mesh_digest,
    midpoint_topology_subdivide,
    normalize_unit_box,
    save_obj,
    triangle_quality,
)
from .classic import butterfly_subdivide, loop_subdivide, midpoint_subdivide
from .selfparam import (
    BijectiveMap,
    CollapseRejected,
    DecimationState,
    FlattenError,
    MapError,
    UVChart,
    collapse_edge_with_param,
    decimate,
    flatten_one_ring,
    init_quadrics,
    load_map,
    map_point,
    quadric_error,
    reflatten_interior,
    save_map,
    validate_collapse,
)
from .neural import (
    MLPParams,
    NetworkBundle,
    VertexState,
    half_flap_frame,
    init_features,
    load_checkpoint,
    mlp_apply,
    neural_subdivide,
    save_checkpoint,
    step_edge,
    step_vertex,
)
from .training import (
    AdamState,
    TrainingPair,
    adam_step,
    generate_dataset,
    grad_check,
    load_dataset,
    loss_l2_levels,
    save_dataset,
    train,
)
from .metrics import (
    DistanceReport,
    compare_schemes,
    format_comparison,
    point_to_mesh_distance,
    sample_surface,
    surface_distance,
)
from . import shapes

__version__ = "0.1.0"
