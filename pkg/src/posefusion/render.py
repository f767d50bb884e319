"""Forward rendering, per-ray radiance, and image-loss gradients w.r.t. camera position."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _backend, _pykernel
from .dual import DVec3
from .geometry import CameraPose, Ray, Scene, Vec3, add, vec3
from .sampling import CounterSampler


class NonFiniteGradientError(FloatingPointError):
    """A gradient component came out NaN/inf (usually a grazing-geometry singularity)."""


@dataclass(frozen=True)
class RenderSettings:
    samples_per_pixel: int = 16
    max_depth: int = 3
    seed: int = 0
    resolution: tuple[int, int] = (200, 300)

    def __post_init__(self):
        if self.samples_per_pixel < 1:
            raise ValueError("samples_per_pixel must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        rows, cols = self.resolution
        if rows <= 0 or cols <= 0:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "resolution", (int(rows), int(cols)))


@dataclass(frozen=True, eq=False)
class Image:
    """Linear RGB radiance, shape (rows, cols, 3), float64."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"image must have shape (rows, cols, 3), got {px.shape}")
        if not np.all(np.isfinite(px)) or np.any(px < 0.0):
            raise ValueError("image values must be finite and >= 0")
        object.__setattr__(self, "pixels", px)

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    @classmethod
    def filled(cls, rows: int, cols: int, rgb: Sequence[float]) -> "Image":
        return cls(np.broadcast_to(np.asarray(rgb, dtype=float), (rows, cols, 3)).copy())

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class GradientReport:
    loss_value: float
    grad: Vec3
    method: str  # "dual" or "finite_difference"

    def __post_init__(self):
        if not all(math.isfinite(g) for g in self.grad):
            raise NonFiniteGradientError(f"non-finite gradient {self.grad}")


@dataclass(frozen=True)
class SamplerState:
    """Coordinates of a single path in the counter-based random stream."""

    seed: int = 0
    pixel: int = 0
    sample: int = 0


# -- packing ---------------------------------------------------------------------

def pack_scene(scene: Scene) -> dict:
    prims = scene.primitives
    n = len(prims)
    kind = np.array([p.kind_id for p in prims], dtype=np.int64)
    data = np.array([p.packed() for p in prims], dtype=np.float64).reshape(n, 9)
    albedo = np.array([p.material.albedo for p in prims], dtype=np.float64).reshape(n, 3)
    emission = np.array([p.material.emission for p in prims], dtype=np.float64).reshape(n, 3)
    lights = np.array(
        [i for i, p in enumerate(prims) if p.kind == "sphere" and p.material.is_emissive], dtype=np.int64
    )
    return {
        "kind": kind,
        "data": data,
        "albedo": albedo,
        "emission": emission,
        "lights": lights,
        "background": np.array(scene.background, dtype=np.float64),
        "eps": float(scene.ray_epsilon),
    }


def pack_camera(pose: CameraPose, resolution: tuple[int, int], position: Optional[Sequence[float]] = None) -> dict:
    rows, cols = resolution
    return {
        "position": np.array(pose.position if position is None else position, dtype=np.float64),
        "right": np.array(pose.right, dtype=np.float64),
        "up": np.array(pose.up, dtype=np.float64),
        "forward": np.array(pose.forward, dtype=np.float64),
        "tan_half": math.tan(math.radians(pose.fov_y) / 2.0),
        "aspect": cols / rows,
    }


def render_raw(scene, pose, settings: RenderSettings, want_grad=False, want_points=False,
               threads=None, backend=None, pack=None):
    """Kernel call; returns (image array, jacobian, points, hit mask)."""
    rows, cols = settings.resolution
    return _backend.render_kernel(
        pack if pack is not None else pack_scene(scene),
        pack_camera(pose, settings.resolution),
        rows, cols, settings.samples_per_pixel, settings.max_depth, int(settings.seed),
        want_grad=want_grad, want_points=want_points, threads=threads, backend=backend,
    )


def render(scene: Scene, pose: CameraPose, settings: RenderSettings = RenderSettings(),
           threads: Optional[int] = None, backend: Optional[str] = None) -> Image:
    img, _, _, _ = render_raw(scene, pose, settings, threads=threads, backend=backend)
    return Image(img)


def radiance(ray: Ray, scene: Scene, depth: int = 0, sampler_state: SamplerState = SamplerState(),
             max_depth: int = 3) -> Vec3:
    """Single-path radiance estimate along ``ray``, starting at bounce ``depth``."""
    if depth > max_depth:
        raise ValueError("depth must be <= max_depth")
    sampler = CounterSampler(sampler_state.seed, np.array([sampler_state.pixel]), np.array([sampler_state.sample]))
    L, _, _ = _pykernel.trace(
        pack_scene(scene),
        DVec3.const(np.array([ray.origin])),
        DVec3.const(np.array([ray.direction])),
        sampler, depth, max_depth,
    )
    return tuple(float(c.value[0]) for c in L)


# -- gradients ---------------------------------------------------------------------

def _check_target(target, settings: RenderSettings):
    if (target.rows, target.cols) != tuple(settings.resolution):
        raise ValueError(
            f"target resolution {(target.rows, target.cols)} does not match settings {settings.resolution}"
        )


def loss_and_gradient_from_jacobian(img: np.ndarray, jac: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all pixel-channels and its gradient via the per-pixel Jacobian."""
    diff = img - target
    count = diff.size
    loss = float(np.sum(diff * diff) / count)
    grad = (2.0 / count) * (diff[..., None] * jac).reshape(-1, 3).sum(axis=0)
    return loss, grad


def image_loss_gradient_dual(scene: Scene, pose: CameraPose, target: Image, settings: RenderSettings = RenderSettings(),
                             threads=None, backend=None) -> GradientReport:
    _check_target(target, settings)
    img, jac, _, _ = render_raw(scene, pose, settings, want_grad=True, threads=threads, backend=backend)
    loss, grad = loss_and_gradient_from_jacobian(img, jac, target.pixels)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(f"non-finite image gradient {grad} at camera {pose.position}")
    return GradientReport(loss, tuple(float(g) for g in grad), "dual")


def central_difference(f: Callable[[Vec3], float], p: Sequence[float], h: float) -> tuple[float, Vec3]:
    """f(p) and the per-axis central difference (f(p + h e_k) - f(p - h e_k)) / 2h."""
    if not h > 0.0:
        raise ValueError("finite-difference step must be > 0")
    p = vec3(p)
    grad = []
    for k in range(3):
        e = [0.0, 0.0, 0.0]
        e[k] = h
        grad.append((f(add(p, tuple(e))) - f(add(p, tuple(-v for v in e)))) / (2.0 * h))
    return f(p), tuple(grad)


def image_loss_gradient_fd(scene: Scene, pose: CameraPose, target: Image, settings: RenderSettings = RenderSettings(),
                           h: float = 1e-3, loss_fn: Optional[Callable[[Vec3], float]] = None,
                           threads=None, backend=None) -> GradientReport:
    """Central differences with common random numbers (one seed for all 7 renders).

    ``loss_fn`` replaces the render+MSE evaluation; it exists so the difference
    scheme itself can be checked against analytic fields.
    """
    if loss_fn is None:
        _check_target(target, settings)
        pack = pack_scene(scene)
        rows, cols = settings.resolution

        def loss_fn(position):
            img, _, _, _ = _backend.render_kernel(
                pack, pack_camera(pose, settings.resolution, position), rows, cols,
                settings.samples_per_pixel, settings.max_depth, int(settings.seed),
                threads=threads, backend=backend,
            )
            d = img - target.pixels
            return float(np.sum(d * d) / d.size)

    value, grad = central_difference(loss_fn, pose.position, h)
    return GradientReport(value, grad, "finite_difference")
