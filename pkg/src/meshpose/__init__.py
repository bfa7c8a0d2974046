"""Skeletal mesh reposing from multi-view keypoints, plus the diffusion-side
machinery (DDIM inversion, rewired cross-frame attention, inversion-depth
selection, score distillation) with toy noise predictors."""

from .align import (AlignProblem, KeypointObservation, OptimizerConfig, OptimReport, TargetSet,
                    keypoint_loss, loss_gradient, mask_loss, optimize_pose, render_keypoints)
from .ddim import (AttentionToyPredictor, Conditioning, DiffusionTrajectory, LinearPredictor,
                   NoiseSchedule, ZeroPredictor, articulate, ddim_step, guide, invert,
                   reconstruct, replay, sample, sds_gradient)
from .depth_select import DepthScore, noise_diff_norm, select_depth
from .errors import (CacheMissError, DivergenceError, InvalidInputError, NonFiniteGradientError,
                     UnusableTargetsError)
from .mvcam import Camera, ViewRig, make_ring_rig, project
from .rewired_attention import (QKV, FrameTensor, build_attention_set, joint_attention,
                                rewired_attention, self_attention)
from .rig import (Bone, KeypointBinding, Pose, Skeleton, SkinnedMesh, evaluate_keypoints_3d,
                  forward_kinematics, skin)

__version__ = "0.1.0"
