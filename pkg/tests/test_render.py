import math

import numpy as np
import pytest

from conftest import box_on_ground_scene, probe_pose, probe_pose_fixed_basis, rel_l2, sphere_probe_scene
from posefusion import _backend
from posefusion.geometry import Material, Ray, Scene, Sphere, make_look_at
from posefusion.harness import ExperimentConfig, load_experiment_scene, target_pose
from posefusion.loss import image_loss
from posefusion.optimizer import OptimizeConfig
from posefusion.render import (GradientReport, Image, NonFiniteGradientError, RenderSettings, SamplerState,
                               central_difference, image_loss_gradient_dual, image_loss_gradient_fd, radiance,
                               render, render_raw)

needs_c = pytest.mark.skipif("cython" not in _backend.available(), reason="compiled kernel not built")


def car_target(res=(50, 75), spp=8):
    cfg = ExperimentConfig(optimize=OptimizeConfig(render=RenderSettings(spp, 3, 0, res)))
    scene, cam = load_experiment_scene(cfg)
    return scene, target_pose(scene, cam, cfg), cfg.render


def test_settings_validation():
    with pytest.raises(ValueError):
        RenderSettings(samples_per_pixel=0)
    with pytest.raises(ValueError):
        RenderSettings(max_depth=0)
    with pytest.raises(ValueError):
        RenderSettings(resolution=(0, 3))
    with pytest.raises(ValueError):
        RenderSettings(seed=-1)
    assert RenderSettings() == RenderSettings(16, 3, 0, (200, 300))


def test_image_rejects_bad_values():
    with pytest.raises(ValueError):
        Image(np.full((2, 2, 3), -0.1))
    with pytest.raises(ValueError):
        Image(np.full((2, 2, 3), np.nan))
    with pytest.raises(ValueError):
        Image(np.zeros((2, 2)))
    assert Image.filled(2, 3, (1, 2, 3)).n_pixels == 6


@pytest.mark.parametrize("backend", _backend.available())
def test_empty_scene_is_background(backend):
    scene = Scene((), (0.25, 0.5, 0.75))
    img = render(scene, make_look_at((0, 0, 0), (0, 0, -1)), RenderSettings(4, 3, 1, (8, 12)), backend=backend)
    assert np.array_equal(img.pixels, np.broadcast_to([0.25, 0.5, 0.75], (8, 12, 3)))


def test_car_visible_from_target():
    scene, pose, settings = car_target()
    px = render(scene, pose, settings).pixels
    differs = np.abs(px - np.array(scene.background)).max(axis=2) > 0.05
    assert differs.mean() >= 0.01


@needs_c
def test_thread_count_does_not_change_output():
    scene, pose, settings = car_target((40, 60), 4)
    ref = render_raw(scene, pose, settings, want_grad=True, want_points=True, threads=1)
    for n in (4, 8):
        out = render_raw(scene, pose, settings, want_grad=True, want_points=True, threads=n)
        for a, b in zip(ref, out):
            assert np.array_equal(a, b)


@needs_c
@pytest.mark.parametrize("which", ["car", "probe", "box"])
def test_backends_bit_identical(which):
    if which == "car":
        scene, pose, _ = car_target()
    elif which == "probe":
        scene, pose = sphere_probe_scene(), probe_pose((0.2, -0.1, 0.3))
    else:
        scene = box_on_ground_scene()
        pose = make_look_at((4, 3, 6), (0, 1, 0))
    settings = RenderSettings(2, 3, 5, (12, 18))
    c = render_raw(scene, pose, settings, want_grad=True, want_points=True, backend="cython")
    p = render_raw(scene, pose, settings, want_grad=True, want_points=True, backend="python")
    for a, b in zip(c, p):
        assert np.array_equal(a, b)


def test_same_seed_is_deterministic_and_seeds_differ():
    scene, pose, _ = car_target((20, 30), 2)
    a = render(scene, pose, RenderSettings(2, 3, 3, (20, 30)))
    b = render(scene, pose, RenderSettings(2, 3, 3, (20, 30)))
    c = render(scene, pose, RenderSettings(2, 3, 4, (20, 30)))
    assert a == b
    assert a != c


def test_radiance_examples():
    light = Material((0, 0, 0), (3.0, 4.0, 5.0))
    grey = Material((0.5, 0.5, 0.5), (0, 0, 0))
    scene = Scene((Sphere(light, "light", center=(0, 0, -5), radius=1.0),
                   Sphere(grey, "car", center=(5, 0, -5), radius=1.0)), (0.1, 0.2, 0.3))
    assert radiance(Ray((0, 0, 0), (0, 1, 0)), scene) == (0.1, 0.2, 0.3)
    hit = radiance(Ray((0, 0, 0), (0, 0, -1)), scene)
    assert all(h >= e for h, e in zip(hit, (3.0, 4.0, 5.0)))
    # at the depth limit only emission comes back
    assert radiance(Ray((0, 0, 0), (0, 0, -1)), scene, depth=3) == (3.0, 4.0, 5.0)
    d = np.array([5.0, 0.0, -4.0])
    d /= np.linalg.norm(d)
    assert radiance(Ray((0, 0, 0), tuple(d)), scene, depth=3) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        radiance(Ray((0, 0, 0), (0, 0, -1)), scene, depth=4)


def test_radiance_matches_kernel_pixel():
    # one path through the public radiance() equals the kernel's value for that pixel
    scene = box_on_ground_scene()
    pose = make_look_at((4, 3, 6), (0, 1, 0), fov_y=40.0, resolution=(1, 1))
    settings = RenderSettings(1, 3, 9, (1, 1))
    px = render(scene, pose, settings, backend="python").pixels[0, 0]
    # reconstruct the jittered primary ray exactly as the kernel does
    from posefusion.sampling import hash_uniform
    u, v = hash_uniform(9, 0, 0, 0), hash_uniform(9, 0, 0, 1)
    th = math.tan(math.radians(40.0) / 2)
    sx = (2 * u - 1) * th
    sy = (1 - 2 * v) * th
    d = np.array(pose.forward) + sx * np.array(pose.right) + sy * np.array(pose.up)
    d /= np.linalg.norm(d)
    r = radiance(Ray(pose.position, tuple(d)), scene, 0, SamplerState(9, 0, 0))
    np.testing.assert_allclose(r, px, rtol=1e-12, atol=1e-12)


def test_depth_limit_bounded_difference():
    scene = box_on_ground_scene()
    pose = make_look_at((4, 3, 6), (0, 1, 0), resolution=(30, 45))
    a = render(scene, pose, RenderSettings(8, 3, 0, (30, 45))).pixels
    b = render(scene, pose, RenderSettings(8, 10, 0, (30, 45))).pixels
    # deeper paths share the first bounces' random numbers and only add energy
    assert np.all(b >= a - 1e-12 * (1 + a))
    assert 0.0 < (b - a).mean() / a.mean() < 0.2


@pytest.mark.parametrize("make", ["car", "box", "probe"])
def test_energy_bound(make):
    if make == "car":
        scene, pose, _ = car_target((30, 45), 4)
    elif make == "box":
        scene, pose = box_on_ground_scene(), make_look_at((4, 3, 6), (0, 1, 0), resolution=(30, 45))
    else:
        scene, pose = sphere_probe_scene(), probe_pose(res=(30, 45))
    e_max = max([max(p.material.emission) for p in scene.primitives] + [max(scene.background)])
    px = render(scene, pose, RenderSettings(4, 3, 0, (30, 45))).pixels
    assert px.max() <= e_max * 3


def test_monte_carlo_error_scales_with_spp():
    scene = box_on_ground_scene()
    pose = make_look_at((4, 3, 6), (0, 1, 0), resolution=(16, 24))

    def spread(spp):
        imgs = np.stack([render(scene, pose, RenderSettings(spp, 3, s, (16, 24))).pixels for s in range(8)])
        return float(np.mean(imgs.std(axis=0, ddof=1)))

    ratio = spread(4) / spread(16)
    assert 2.0 / 3.0 < ratio < 6.0  # 1/sqrt(spp) predicts 2


def test_gradient_zero_at_target():
    scene = sphere_probe_scene()
    settings = RenderSettings(4, 3, 0, (30, 45))
    pose = probe_pose((0.1, 0.2, 0.3), (30, 45))
    target = render(scene, pose, settings)
    g = image_loss_gradient_dual(scene, pose, target, settings)
    assert g.loss_value == 0.0
    assert g.grad == (0.0, 0.0, 0.0)
    fd = image_loss_gradient_fd(scene, pose, target, settings)
    assert max(map(abs, fd.grad)) < 1e-6


def test_gradient_zero_when_object_leaves_frame():
    scene = sphere_probe_scene()
    settings = RenderSettings(4, 3, 0, (30, 45))
    target = render(scene, probe_pose(res=(30, 45)), settings)
    far = probe_pose_fixed_basis((200.0, 0.0, 0.0), (30, 45))
    assert np.all(render(scene, far, settings).pixels == 0.0)
    g = image_loss_gradient_dual(scene, far, target, settings)
    assert g.loss_value > 0.0
    assert g.grad == (0.0, 0.0, 0.0)


def test_loss_value_matches_image_loss():
    scene = sphere_probe_scene()
    settings = RenderSettings(4, 3, 2, (30, 45))
    target = render(scene, probe_pose_fixed_basis((0.3, 0, 0), (30, 45)), settings)
    pose = probe_pose_fixed_basis((0.0, 0.2, -0.1), (30, 45))
    g = image_loss_gradient_dual(scene, pose, target, settings)
    assert g.loss_value == image_loss(render(scene, pose, settings), target)


def test_dual_matches_fd_on_probes():
    rng = np.random.default_rng(123)
    scene = sphere_probe_scene()
    settings = RenderSettings(4, 3, 0, (40, 60))
    for _ in range(5):
        t = rng.uniform(-0.5, 0.5, 3)
        c = t + rng.uniform(-0.5, 0.5, 3)
        target = render(scene, probe_pose_fixed_basis(t, (40, 60)), settings)
        pose = probe_pose_fixed_basis(c, (40, 60))
        _, _, _, hit = render_raw(scene, pose, settings, want_points=True)
        assert hit.all()  # smooth probe: every primary ray is on the sphere
        gd = image_loss_gradient_dual(scene, pose, target, settings)
        gf = image_loss_gradient_fd(scene, pose, target, settings, h=1e-3)
        assert gd.method == "dual" and gf.method == "finite_difference"
        assert rel_l2(gd.grad, gf.grad) < 1e-3


def test_fd_on_quadratic_field():
    q = (1.0, -2.0, 0.5)
    p = (0.3, 0.7, -1.1)
    value, grad = central_difference(lambda x: sum((a - b) ** 2 for a, b in zip(x, q)), p, 1e-3)
    np.testing.assert_allclose(grad, [2 * (a - b) for a, b in zip(p, q)], rtol=1e-9)
    rep = image_loss_gradient_fd(None, make_look_at(p, (0, 0, 0)), None,
                                 loss_fn=lambda x: sum((a - b) ** 2 for a, b in zip(x, q)))
    np.testing.assert_allclose(rep.grad, grad, rtol=0, atol=0)
    with pytest.raises(ValueError):
        central_difference(lambda x: 0.0, p, 0.0)


def test_gradient_report_rejects_nan():
    with pytest.raises(NonFiniteGradientError):
        GradientReport(0.0, (0.0, math.nan, 0.0), "dual")


def test_resolution_mismatch():
    scene = sphere_probe_scene()
    with pytest.raises(ValueError):
        image_loss_gradient_dual(scene, probe_pose(), Image.filled(3, 3, (0, 0, 0)), RenderSettings(1, 3, 0, (4, 4)))
