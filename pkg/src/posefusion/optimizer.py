"""Adam and the camera-position optimization loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import render as _render
from .geometry import CameraPose, Scene, Vec3, add, translate, vec3
from .loss import LossBreakdown, LossParams, Mode, distance_loss_gradient, euclidean_distance, total_loss
from .render import Image, NonFiniteGradientError, RenderSettings

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamState:
    m: Vec3 = (0.0, 0.0, 0.0)
    v: Vec3 = (0.0, 0.0, 0.0)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state: AdamState, grad: Sequence[float], lr: float) -> tuple[AdamState, Vec3]:
    """One bias-corrected Adam update. Returns the new state and the parameter delta."""
    g = vec3(grad)
    if not all(math.isfinite(x) for x in g):
        raise NonFiniteGradientError(f"Adam received a non-finite gradient {g}")
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = tuple(b1 * mk + (1.0 - b1) * gk for mk, gk in zip(state.m, g))
    v = tuple(b2 * vk + (1.0 - b2) * gk * gk for vk, gk in zip(state.v, g))
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    delta = tuple(-lr * (mk / c1) / (math.sqrt(vk / c2) + state.eps) for mk, vk in zip(m, v))
    return AdamState(m, v, t, b1, b2, state.eps), delta


@dataclass(frozen=True)
class OptimizeConfig:
    learning_rate: float = 0.15
    iterations: int = 30
    loss: LossParams = field(default_factory=LossParams)
    render: RenderSettings = field(default_factory=RenderSettings)

    def __post_init__(self):
        if not self.learning_rate >= 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @property
    def seed(self) -> int:
        return self.render.seed


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    position: Vec3
    breakdown: LossBreakdown
    grad_image: Vec3
    grad_distance: Vec3
    grad_total: Vec3
    effective_alpha: float
    stage: int  # 1 while the distance term is active, 0 once optimizing image loss alone
    position_error: float
    adam: AdamState


@dataclass(frozen=True)
class Trajectory:
    mode: Mode
    records: tuple[IterationRecord, ...]
    target_position: Optional[Vec3] = None

    @property
    def final_position(self) -> Vec3:
        return self.records[-1].position

    @property
    def final_position_error(self) -> float:
        return self.records[-1].position_error

    def __len__(self):
        return len(self.records)


class OptimizationAborted(RuntimeError):
    """Raised on a numerical failure; carries the trajectory recorded so far."""

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


_ZERO = (0.0, 0.0, 0.0)


def optimize_pose(
    scene: Scene,
    initial_pose: CameraPose,
    target_image: Image,
    box_center: Sequence[float],
    d_t: float,
    config: OptimizeConfig = OptimizeConfig(),
    target_position: Optional[Sequence[float]] = None,
    box_center_fn: Optional[Callable[[CameraPose], Vec3]] = None,
    frame_callback: Optional[Callable[[int, Image], None]] = None,
    threads: Optional[int] = None,
    backend: Optional[str] = None,
) -> Trajectory:
    """Move the camera by Adam on the mode's loss.

    Each iteration applies the pending Adam delta, renders, evaluates the loss and
    gradient, and queues the next delta; iteration 0 evaluates the initial pose.
    ``box_center_fn`` re-detects the box at every pose (otherwise it is fixed).
    """
    mode = config.loss.mode
    settings = config.render
    if (target_image.rows, target_image.cols) != settings.resolution:
        raise ValueError("target image resolution does not match render settings")
    target_position = vec3(target_position) if target_position is not None else None
    pack = _render.pack_scene(scene)
    pose = initial_pose
    state = AdamState()
    pending = _ZERO
    latched = False
    records: list[IterationRecord] = []
    box_center = vec3(box_center)

    for it in range(config.iterations):
        if it > 0:
            pose = translate(pose, pending)
        if box_center_fn is not None:
            box_center = vec3(box_center_fn(pose))

        want_image_grad = mode is not Mode.DISTANCE_ONLY
        img, jac, _, _ = _render.render_raw(scene, pose, settings, want_grad=want_image_grad,
                                            threads=threads, backend=backend, pack=pack)
        current = Image(img)
        if frame_callback is not None:
            frame_callback(it, current)

        bd = total_loss(current, target_image, pose.position, box_center, d_t, config.loss, latched)
        if mode is Mode.TWO_STAGE and bd.effective_alpha == 0.0:
            latched = True

        grad_img = _ZERO
        if want_image_grad:
            _, g = _render.loss_and_gradient_from_jacobian(img, jac, target_image.pixels)
            grad_img = tuple(float(x) for x in g)
        grad_dist = _ZERO
        if bd.effective_alpha > 0.0:
            grad_dist = distance_loss_gradient(pose.position, box_center, d_t, bd.effective_alpha)
        grad = tuple(a + b for a, b in zip(grad_img, grad_dist))

        if mode is Mode.TWO_STAGE:
            stage = 0 if latched else 1
        else:
            stage = 0 if mode is Mode.IMAGE_ONLY else 1
        err = euclidean_distance(pose.position, target_position) if target_position is not None else math.nan
        records.append(IterationRecord(it, pose.position, bd, grad_img, grad_dist, grad, bd.effective_alpha,
                                       stage, err, state))
        log.debug("%s iter %d pos=%s L=%.6g d_c=%.4f", mode.value, it, pose.position, bd.L, bd.d_c)

        try:
            state, pending = adam_step(state, grad, config.learning_rate)
        except NonFiniteGradientError as exc:
            raise OptimizationAborted(f"{mode.value} iteration {it}: {exc}",
                                      Trajectory(mode, tuple(records), target_position)) from exc

    return Trajectory(mode, tuple(records), target_position)
