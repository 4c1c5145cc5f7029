"""Top-down class grids trained by volumetric rendering of perspective
semantic segmentations, with analytic scenes, gradient verification, and
an inverse-perspective-mapping baseline."""

from .bevgrid import (BevGrid, BevSpec, CellRef, argmax_map, load_bev,
                      sample_nearest, save_bev, softmax_probs, world_to_cell)
from .density import (DensityField, Frustum, depth_shadow_field, in_frame,
                      query_density, restrict_to_frustum, scene_field)
from .errors import (BevRenderError, ConfigurationError, DataError,
                     NoSupervisionError, NumericError)
from .evalbaseline import ConfusionMatrix, confusion, iou_scores, ipm_warp
from .geometry import (Intrinsics, Pose, Ray, compose_relative_pose,
                       ortho_project, pixel_ray, transform_point)
from .lossgrad import (GradBuffer, LossConfig, backward_to_bev,
                       finite_diff_check, frame_loss, weighted_ce)
from .renderer import (RayIntegration, RenderConfig, integrate_ray,
                       render_class_probs, render_patch, render_scalar,
                       sample_ray_depths)
from .scenesim import (Box, Scene, SceneClass, Sequence, corrupt_labels,
                       generate_scene, gt_bev, gt_perspective_seg,
                       render_depth_image, straight_trajectory)
from .trainer import (FrameOffsetPolicy, TrainConfig, TrainResult,
                      sample_supervision, sgd_step, train_bev)

__version__ = "0.1.0"
