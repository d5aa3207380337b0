"""Exocentric-to-egocentric view prior toolkit.

Non-neural core of a cross-view video generation pipeline: monocular/video
depth alignment, egocentric point-cloud prior rendering, geometry-biased
attention, clean-latent conditioning, and object-level evaluation metrics,
all operating on file-based tensors with a small CLI.
"""

from .geometry import Intrinsics, Pose, camera_center, project, project_points, ray_direction, unproject
from .io_formats import Camera, CameraTrajectory, ObjectSet, ObjectTrack, read_cameras, read_objects, read_tensor, write_cameras, write_objects, write_tensor
from .depth_align import AffineParams, DepthStack, align_video, apply_alignment, fit_affine_frame, smooth_params
from .ego_render import PointCloudFrame, RenderedPrior, lift_frame, lift_video, render_clouds, render_frame, render_prior
from .gga import (
    AttentionBlockLayout,
    DirectionField,
    GeometryBias,
    PatchGrid,
    attention_gradients,
    bias_matrix,
    build_direction_inputs,
    geometry_gain,
    gga_attention,
    gradient_check,
    patch_directions,
)
from .conditioning import (
    ConditionState,
    LatentTensor,
    denoise_step,
    extract_ego,
    make_toy_denoiser,
    pack_input,
    run_denoising,
    unpack,
)
from .metrics import bbox_iou, contour_accuracy, evaluate_video, location_error, match_objects, psnr, ssim

__version__ = "0.1.0"
