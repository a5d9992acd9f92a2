"""Multi-frame super-resolution of planar targets.

Reconstructs a high-resolution, rectified, lens-distortion-free image of a
planar object (e.g. a solar module) from a sequence of low-resolution
frames, by jointly registering the frames under a homography-plus-radial-
distortion camera model and inverting the sampling process with an
edge-preserving prior.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DegenerateConfigurationError,
    DistortionDomainError,
    DivergenceError,
    EmptyOverlapError,
    IllConditionedError,
    InsufficientViewsError,
    NumericalError,
    PlanarSRError,
    SingularProjectionError,
)
from .geometry import (
    CameraModel,
    HomogeneousPoint2,
    Homography,
    cardano_case,
    distort_point,
    distort_points,
    distort_radius,
    forward_map,
    forward_map_points,
    inverse_map,
    inverse_map_points,
    monotone_radius_limit,
    undistort_point,
    undistort_points,
    undistort_radii,
    undistort_radius,
)
from .grids import HrGridSpec, ImageGrid
from .metrics import MetricsReport, crack_recall, psnr, ssim
from .observation import (
    MotionField,
    SystemMatrix,
    apply_adjoint,
    apply_forward,
    build_motion_field,
    build_system_matrix,
)
from .reconstruction import (
    BtvParams,
    ReconstructionReport,
    SolverOptions,
    bicubic_upsample,
    btv_value_grad,
    coverage_mask,
    data_value_grad,
    rectify_frame_bicubic,
    solve_map,
    update_robust_weights,
)
from .registration import (
    CorrespondenceSet,
    MultiscaleOptions,
    RefineOptions,
    RegistrationResult,
    build_template,
    estimate_homography_dlt,
    multiscale_register,
    refine_photometric,
    refine_points,
    reprojection_rms,
    zhang_initialize,
)
from .synth import (
    AcquisitionSpec,
    NoiseParams,
    PoseJitter,
    Scene,
    SceneSpec,
    SequenceData,
    default_correspondence_points,
    generate_scene,
    generate_sequence,
    perturb_correspondences,
)
