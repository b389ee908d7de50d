"""Graded image-pair similarity from camera geometry, contrastive embedding
training with analytic gradients, and retrieval evaluation."""

from .embedding import (
    Descriptor,
    EmbeddingModel,
    ModelGradients,
    backward_pair,
    embed_matrix,
    forward,
    initialize_model,
)
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    FormatError,
    GradedSimError,
    InvalidInputError,
    TrainingDivergedError,
)
from .fov2d import (
    DEFAULT_OVERLAP_MODE,
    GARDEN_FOV_PARAMS,
    STREET_FOV_PARAMS,
    CameraPose2D,
    FovParams,
    FovSector,
    OverlapMode,
    pairwise_similarity_matrix,
    sector_from_pose,
    sector_overlap,
    strong_2d_similarity,
    weak_2d_similarity,
)
from .fov3d import (
    CameraIntrinsics,
    PointCloud,
    Pose6DOF,
    VisibleSet,
    fov3d_matrix,
    fov3d_similarity,
    visible_points,
)
from .loss import (
    LossConfig,
    PairLossResult,
    binary_label_from_psi,
    cl_loss,
    gcl_descriptor_gradients,
    gcl_loss,
    l2_distance,
)
from .metrics import (
    DEFAULT_TIERS,
    GeoCriterion,
    PsiCriterion,
    average_precision,
    geo_positives,
    localized_fraction,
    psi_positives,
    recall_at_k,
    threshold_sweep,
)
from .mining import (
    STRATEGIES,
    Batch,
    BatchStrategy,
    bin_of,
    epoch_schedule,
    get_strategy,
    sample_batch,
)
from .pairs import GradedPair, GradedPairSet
from .retrieval import (
    RetrievalIndex,
    WhitenTransform,
    apply_whitening,
    fit_whitening,
    search,
)
from .training import TrainConfig, TrainReport, lr_at, train

__version__ = "0.1.0"
