import math

import numpy as np
import pytest

from posefusion.geometry import Box, Material, Plane, Scene, Sphere, default_scene, make_look_at

LIGHT = Material((0.0, 0.0, 0.0), (40.0, 40.0, 40.0))
GREY = Material((0.6, 0.6, 0.6), (0.0, 0.0, 0.0))


def sphere_probe_scene(light_pos=(3.0, 4.0, 4.0)) -> Scene:
    """A large diffuse sphere that fills the frame, lit by a small sphere behind the camera.

    Black background and a convex receiver: no silhouettes, no occluded light
    samples, so the image is a smooth function of the camera position.
    """
    return Scene(
        (
            Sphere(Material((0.7, 0.5, 0.3), (0.0, 0.0, 0.0)), "car", center=(0.0, 0.0, -10.0), radius=5.0),
            Sphere(LIGHT, "light", center=light_pos, radius=0.5),
        ),
        background=(0.0, 0.0, 0.0),
    )


def probe_pose(position=(0.0, 0.0, 0.0), res=(100, 150)):
    # narrow field of view keeps every primary ray on the big sphere
    return make_look_at(position, (0.0, 0.0, -10.0), (0.0, 1.0, 0.0), 20.0, res)


def probe_pose_fixed_basis(position, res=(100, 150)):
    base = probe_pose((0.0, 0.0, 0.0), res)
    from dataclasses import replace
    return replace(base, position=tuple(position))


def box_on_ground_scene() -> Scene:
    return Scene(
        (
            Plane(GREY, "ground", point=(0.0, 0.0, 0.0), normal=(0.0, 1.0, 0.0)),
            Box(Material((0.8, 0.2, 0.1), (0.0, 0.0, 0.0)), "car", min=(-1.0, 1.0, -2.0), max=(1.0, 2.0, 2.0)),
            Sphere(LIGHT, "light", center=(0.0, 8.0, 0.0), radius=1.0),
        ),
        background=(0.2, 0.3, 0.4),
    )


@pytest.fixture(scope="session")
def car_scene():
    return default_scene()


def rel_l2(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def lin_grid(lo, hi, n):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


__all__ = ["sphere_probe_scene", "probe_pose", "probe_pose_fixed_basis", "box_on_ground_scene", "rel_l2", "math"]
