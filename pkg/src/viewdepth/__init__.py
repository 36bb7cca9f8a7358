"""View-consistent monocular depth tools.

Differentiable depth-map warping with a z-buffer minimum, a small
reverse-mode autodiff engine, depth/pose networks with adversarial pose
mining, evaluation metrics, and analytic synthetic scenes that make every
geometric and gradient claim checkable at desk scale.
"""

from .autodiff import Tape, Tensor, backward, gradient_reversal, sgd_step
from .depthmap import DEPTH_MAX, DEPTH_MIN, DegenerateMaskError, DepthMap
from .geometry import (
    Intrinsics,
    Pose6,
    RigidTransform,
    backproject,
    invert_transform,
    pose_to_transform,
    project,
    transform_to_pose,
)
from .losses import (
    LossConfig,
    adversarial_loss,
    dorn_loss,
    dorn_soft_decode,
    masked_berhu,
    masked_l1,
)
from .metrics import MetricsReport, evaluate, multiview_report
from .models import Networks, PoseRange, load_checkpoint, save_checkpoint
from .pfm import read_pfm, write_pfm
from .synth import Scene, generate_scene, make_sample, render_depth, render_view
from .training import (
    PoseStrategy,
    TrainConfig,
    run_benchmark,
    standard_benchmark_config,
    train_loop,
    train_step,
)
from .warp import WarpResult, warp_depth, warp_depth_backward, warp_tensor

__version__ = "0.1.0"
