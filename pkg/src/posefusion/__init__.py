"""Camera position optimization from a differentiable path tracer plus a Lidar distance prior.

The camera moves by Adam on ``L = L_i + alpha * |d_c - d_t|``: image MSE against a
target render, plus the gap between the camera's distance to a detected object
and the distance measured from the target view.
"""

from ._backend import BACKEND, available as available_backends
from .detector import Cluster, Detection, NoObjectError, cluster_points, detect_primary_object, fit_box
from .geometry import (Box, CameraPose, Hit, Material, Plane, Ray, Scene, SceneError, SceneParseError,
                       SceneValidationError, Sphere, Triangle, default_scene, dump_scene, intersect, load_scene,
                       load_scene_file, make_look_at, translate)
from .harness import CameraSpec, ExperimentConfig, ExperimentReport, prepare_target, run_all
from .lidar import PointCloud, PointCloudParseError, capture_point_cloud, read_point_cloud, write_point_cloud
from .loss import (ALL_MODES, LossBreakdown, LossParams, Mode, distance_loss, distance_loss_gradient,
                   effective_alpha, image_loss, total_loss)
from .optimizer import (AdamState, IterationRecord, OptimizationAborted, OptimizeConfig, Trajectory, adam_step,
                        optimize_pose)
from .render import (GradientReport, Image, NonFiniteGradientError, RenderSettings, image_loss_gradient_dual,
                     image_loss_gradient_fd, radiance, render)

__version__ = "0.1.0"
