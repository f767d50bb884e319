"""Image MSE, distance loss, the joint/two-stage combination, and the distance-loss gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .geometry import Vec3, vec3


class Mode(str, Enum):
    IMAGE_ONLY = "image_only"
    DISTANCE_ONLY = "distance_only"
    JOINT = "joint"
    TWO_STAGE = "two_stage"


ALL_MODES = (Mode.IMAGE_ONLY, Mode.DISTANCE_ONLY, Mode.JOINT, Mode.TWO_STAGE)


class ResolutionMismatchError(ValueError):
    pass


class DistanceSingularityError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class LossParams:
    alpha: float = 10.0
    tau: float = 2.0
    mode: Mode = Mode.TWO_STAGE

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.alpha >= 0.0:
            raise ValueError("alpha must be >= 0")
        if not self.tau > 0.0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True)
class LossBreakdown:
    L_i: float
    L_d: float
    L: float
    effective_alpha: float
    d_c: float
    d_t: float


def euclidean_distance(p: Sequence[float], q: Sequence[float]) -> float:
    return math.sqrt(sum((a - b) * (a - b) for a, b in zip(vec3(p), vec3(q))))


def distance_loss(d_c: float, d_t: float, alpha: float) -> float:
    """alpha * sqrt((d_c - d_t)^2), i.e. the alpha-scaled absolute difference."""
    return alpha * abs(d_c - d_t)


def distance_loss_gradient(camera: Sequence[float], box_center: Sequence[float], d_t: float, alpha: float) -> Vec3:
    """d(distance_loss)/d(camera); zero at the kink d_c == d_t."""
    diff = tuple(a - b for a, b in zip(vec3(camera), vec3(box_center)))
    d_c = math.sqrt(sum(v * v for v in diff))
    if d_c < 1e-9:
        raise DistanceSingularityError("camera coincides with the box center; distance gradient undefined")
    gap = d_c - d_t
    if abs(gap) < 1e-12:
        return (0.0, 0.0, 0.0)
    k = alpha * math.copysign(1.0, gap) / d_c
    return tuple(k * v for v in diff)


def image_loss(current, target) -> float:
    """Mean of squared differences over every pixel and channel (divides by 3N)."""
    a = getattr(current, "pixels", current)
    b = getattr(target, "pixels", target)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ResolutionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d) / d.size)


def effective_alpha(mode, d_c: float, d_t: float, params: LossParams, latched: bool = False) -> float:
    """Distance weight for this step. ``latched`` marks a two-stage run that already switched."""
    mode = Mode(mode)
    if mode is Mode.IMAGE_ONLY:
        return 0.0
    if mode is Mode.TWO_STAGE and (latched or abs(d_c - d_t) < params.tau):
        return 0.0
    return params.alpha


def total_loss(current, target, camera: Sequence[float], box_center: Sequence[float], d_t: float,
               params: LossParams, latched: bool = False) -> LossBreakdown:
    d_c = euclidean_distance(camera, box_center)
    L_i = image_loss(current, target)
    alpha = effective_alpha(params.mode, d_c, d_t, params, latched)
    L_d = distance_loss(d_c, d_t, alpha)
    image_part = 0.0 if params.mode is Mode.DISTANCE_ONLY else L_i
    return LossBreakdown(L_i=L_i, L_d=L_d, L=image_part + L_d, effective_alpha=alpha, d_c=d_c, d_t=d_t)
