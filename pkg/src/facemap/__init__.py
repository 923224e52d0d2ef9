"""Geodesic geometry maps, bilinear face fitting and emotion augmentation for 3D face meshes."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AtlasError,
    BankError,
    DegenerateEmbeddingError,
    FacemapError,
    MeshFormatError,
    NumericalError,
    TopologyError,
    ValidationError,
)
from .mesh import EmotionLabel, FrameSequence, TriangleMesh, load_mesh, save_mesh  # noqa: E402
from .geodesics import (  # noqa: E402
    DistanceMatrix,
    HeatSolverContext,
    all_pairs_geodesics,
    build_heat_context,
    geodesic_from_source,
)
from .mds import PlanarEmbedding, classical_mds_2d, double_center  # noqa: E402
from .geometry_map import GeometryMap, TemplateAtlas, build_atlas, decode, encode  # noqa: E402
from .morphable import (  # noqa: E402
    BilinearFaceModel,
    Landmarks2D,
    PoseSOP,
    evaluate_model,
    fit_sequence,
    project_sop,
    solve_expression,
    solve_pose,
)
from .emotion import (  # noqa: E402
    ReferenceBank,
    RegionWeightField,
    augment_emotion,
    build_region_weights,
    nearest_calm_exemplar,
)
from .audio import FeatureMatrix, FeatureWindowTensor, assemble_windows, upsample_linear  # noqa: E402
from .losses import (  # noqa: E402
    BatchPredictions,
    LossWeights,
    VertexWeightMask,
    adversarial_loss,
    classification_error,
    classification_loss_fake,
    classification_loss_real,
    discriminator_objective,
    generator_objective,
    reconstruction_error,
    reconstruction_loss,
    velocity_error,
    weighted_position_loss,
)
