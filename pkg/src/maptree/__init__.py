"""Recover families of near-isometric dense maps between triangle meshes.

The pipeline enumerates low-frequency spectral alignments in a tree, refines
each candidate with bijectivity-aware spectral upsampling, prunes implausible
or duplicate branches by alignment energies, and scores the surviving dense
maps with a geodesic/conformal quality suite. See :mod:`maptree.cli` for the
command-line entry points.
"""

from .analysis import (
    Landscape2D,
    MapDistance,
    MapEnsemble,
    distance_matrix,
    kmeans,
    map_pair_distance,
    mds_embed,
    random_maps,
)
from .errors import (
    AllFacesDegenerate,
    BasisExhausted,
    CountTooLarge,
    DegenerateAngle,
    DimensionMismatch,
    EmptyCandidates,
    EmptySourceSet,
    GroupTooLarge,
    KTooLarge,
    MapTreeError,
    MissingDistances,
    NonSquare,
    NonSymmetric,
    ParseError,
    PreconditionViolated,
    SingularLeastSquares,
    SolverNoConvergence,
    UnknownFlag,
    ValidationError,
    ZeroConstantSum,
)
from .fmap import (
    FunctionalMap,
    PointwiseMap,
    embed_block,
    energy_lap_comm,
    energy_ortho,
    energy_zoomout,
    fmap_distance,
    fmap_from_json,
    fmap_to_json,
    functional_to_pointwise,
    load_functional_map,
    load_pointwise_map,
    nearest_rows,
    pointwise_to_functional,
    save_functional_map,
    save_pointwise_map,
)
from .mesh import (
    ComponentSplit,
    GeodesicCache,
    TriangleMesh,
    connected_components,
    default_seed_vertex,
    farthest_point_sample,
    geodesic_distances,
    load_mesh,
    normalize_to_unit_area,
    save_ply,
)
from .metrics import (
    QualityReport,
    accuracy,
    conformal_distortion,
    conformal_distortion_detail,
    dirichlet_energy,
    geodesic_distortion,
    orientation_flip_fraction,
    quality_report,
)
from .refine import (
    MapPair,
    RefineConfig,
    bijective_zoomout,
    dense_readout,
    energy_bijective,
    refine_node,
    zoomout,
)
from .select import (
    CandidateSet,
    SelectionResult,
    SelfSymmetryChoice,
    cycle_energy,
    extract_symmetric_region,
    select_by_cycles,
    select_self_symmetry,
)
from .spectral import (
    EigenGrouping,
    LaplacianPair,
    SpectralBasis,
    basis_for_mesh,
    build_laplacian,
    compute_basis,
    group_eigenvalues,
    load_basis,
    project_function,
    save_basis,
)
from .tree import (
    ExplorationConfig,
    MapTree,
    MapTreeNode,
    NodeStatus,
    check_recovered_isometries,
    enumerate_signed_permutations,
    expand_node,
    explore,
    init_tree,
    prune,
    save_tree,
    tree_to_json,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
