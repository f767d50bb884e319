"""End-to-end protocol: target render, Lidar, one detection, then the four optimization modes.

Every mode starts from the same pose and consumes the same target image, box
center and target distance; their hash goes into the report so runs can be
compared byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import imageio
from .detector import DEFAULT_MIN_POINTS, DEFAULT_RADIUS, NoObjectError, detect_primary_object
from .geometry import CameraPose, Scene, Vec3, add, default_scene_path, load_scene, make_look_at, vec3
from .lidar import capture_point_cloud
from .loss import ALL_MODES, LossParams, Mode, euclidean_distance
from .optimizer import OptimizationAborted, OptimizeConfig, Trajectory, optimize_pose
from .render import Image, NonFiniteGradientError, RenderSettings, render

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

TARGET_POSITION = (8.0, 5.0, 14.0)
INITIAL_TRANSLATION = (12.0, 8.0, 9.0)

CSV_HEADER = ("iter,cam_x,cam_y,cam_z,L_i,L_d,L,alpha_eff,d_c,d_t,"
              "grad_img_x,grad_img_y,grad_img_z,grad_dist_x,grad_dist_y,grad_dist_z,pos_err")
SUMMARY_HEADER = "mode,L_i_final,L_d_final,cam_x,cam_y,cam_z,dist_to_car,dist_to_target"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CameraSpec:
    """How the fixed camera basis is built. ``look_at=None`` aims at the car centroid."""

    fov_y: float = 60.0
    look_at: Optional[Vec3] = None
    up: Vec3 = (0.0, 1.0, 0.0)


def read_camera_spec(text: str) -> CameraSpec:
    """The optional ``[camera]`` table of a scene file."""
    table = tomllib.loads(text).get("camera", {})
    if not isinstance(table, dict):
        raise ConfigError("'camera' must be a table")
    unknown = set(table) - {"fov_y", "look_at", "up"}
    if unknown:
        raise ConfigError(f"camera: unknown keys {sorted(unknown)}")
    spec = CameraSpec()
    if "fov_y" in table:
        spec = replace(spec, fov_y=float(table["fov_y"]))
    if "look_at" in table:
        spec = replace(spec, look_at=vec3(table["look_at"]))
    if "up" in table:
        spec = replace(spec, up=vec3(table["up"]))
    return spec


@dataclass(frozen=True)
class ExperimentConfig:
    scene_path: Optional[Path] = None  # None selects the bundled car-proxy scene
    target_position: Vec3 = TARGET_POSITION
    initial_translation: Vec3 = INITIAL_TRANSLATION
    modes: tuple[Mode, ...] = ALL_MODES
    optimize: OptimizeConfig = field(default_factory=OptimizeConfig)
    out_dir: Optional[Path] = None
    detector_radius: float = DEFAULT_RADIUS
    detector_min_points: int = DEFAULT_MIN_POINTS
    detect_per_iteration: bool = False
    frames: bool = False
    parallel_modes: bool = False
    threads: Optional[int] = None
    backend: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "target_position", vec3(self.target_position))
        object.__setattr__(self, "initial_translation", vec3(self.initial_translation))
        try:
            modes = tuple(Mode(m) for m in self.modes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not modes:
            raise ConfigError("at least one mode is required")
        if len(set(modes)) != len(modes):
            raise ConfigError("modes must not repeat")
        object.__setattr__(self, "modes", modes)
        if self.scene_path is not None:
            object.__setattr__(self, "scene_path", Path(self.scene_path))
        if self.out_dir is not None:
            object.__setattr__(self, "out_dir", Path(self.out_dir))

    @property
    def initial_position(self) -> Vec3:
        return add(self.target_position, self.initial_translation)

    @property
    def render(self) -> RenderSettings:
        return self.optimize.render

    def for_mode(self, mode: Mode) -> OptimizeConfig:
        return replace(self.optimize, loss=replace(self.optimize.loss, mode=mode))

    def resolved_scene_path(self) -> Path:
        return self.scene_path if self.scene_path is not None else default_scene_path()


def load_experiment_scene(config: ExperimentConfig) -> tuple[Scene, CameraSpec]:
    path = config.resolved_scene_path()
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scene {path}: {exc}") from exc
    return load_scene(text), read_camera_spec(text)


def target_pose(scene: Scene, camera: CameraSpec, config: ExperimentConfig) -> CameraPose:
    look = camera.look_at if camera.look_at is not None else scene.reference_centroid()
    return make_look_at(config.target_position, look, camera.up, camera.fov_y, config.render.resolution)


@dataclass(frozen=True)
class PreparedTarget:
    image: Image
    box_center: Vec3
    d_t: float
    pose: CameraPose

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.image.pixels, dtype="<f8").tobytes())
        h.update(np.asarray(self.box_center, dtype="<f8").tobytes())
        h.update(np.asarray([self.d_t], dtype="<f8").tobytes())
        return h.hexdigest()


def prepare_target(scene: Scene, config: ExperimentConfig, camera: CameraSpec = CameraSpec()) -> PreparedTarget:
    """Render the target view, capture its point cloud and detect the box once."""
    pose = target_pose(scene, camera, config)
    settings = config.render
    image = render(scene, pose, settings, threads=config.threads, backend=config.backend)
    cloud = capture_point_cloud(scene, pose, settings, threads=config.threads, backend=config.backend)
    try:
        det = detect_primary_object(cloud, config.detector_radius, config.detector_min_points)
    except NoObjectError as exc:
        raise NoObjectError(
            f"scene {config.resolved_scene_path()}: no object detected from {config.target_position} "
            f"(radius {config.detector_radius}, min_points {config.detector_min_points}, "
            f"{len(cloud)} points): {exc}"
        ) from exc
    d_t = euclidean_distance(config.target_position, det.center)
    return PreparedTarget(image, det.center, d_t, pose)


@dataclass(frozen=True)
class ModeResult:
    mode: Mode
    trajectory: Optional[Trajectory]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class ModeSummary:
    mode: Mode
    final_position: Vec3
    L_i: float
    L_d: float
    dist_to_car: float
    dist_to_target: float


@dataclass(frozen=True)
class ExperimentReport:
    d_t: float
    box_center: Vec3
    input_hash: str
    rows: tuple[ModeSummary, ...]
    results: tuple[ModeResult, ...]
    files: tuple[Path, ...]

    def row(self, mode) -> ModeSummary:
        mode = Mode(mode)
        for r in self.rows:
            if r.mode is mode:
                return r
        raise KeyError(mode.value)

    @property
    def failures(self) -> dict[Mode, str]:
        return {r.mode: r.error for r in self.results if not r.ok}


def summarize(trajectory: Trajectory) -> ModeSummary:
    last = trajectory.records[-1]
    return ModeSummary(trajectory.mode, last.position, last.breakdown.L_i, last.breakdown.L_d,
                       last.breakdown.d_c, last.position_error)


# -- writers ---------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def trajectory_csv(trajectory: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER.split(","))
    for r in trajectory.records:
        b = r.breakdown
        w.writerow([r.iteration, *map(_fmt, r.position), _fmt(b.L_i), _fmt(b.L_d), _fmt(b.L),
                    _fmt(r.effective_alpha), _fmt(b.d_c), _fmt(b.d_t), *map(_fmt, r.grad_image),
                    *map(_fmt, r.grad_distance), _fmt(r.position_error)])
    return buf.getvalue()


def _write_text(path: Path, text: str) -> Path:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_csv(trajectory: Trajectory, path: Union[str, Path]) -> Path:
    return _write_text(Path(path), trajectory_csv(trajectory))


def summary_csv(rows: Sequence[ModeSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER.split(","))
    for r in rows:
        w.writerow([r.mode.value, _fmt(r.L_i), _fmt(r.L_d), *map(_fmt, r.final_position),
                    _fmt(r.dist_to_car), _fmt(r.dist_to_target)])
    return buf.getvalue()


def write_summary(report: Union[ExperimentReport, Sequence[ModeSummary]], path: Union[str, Path]) -> Path:
    rows = report.rows if isinstance(report, ExperimentReport) else report
    return _write_text(Path(path), summary_csv(rows))


_COLORS = {
    Mode.IMAGE_ONLY: "#d62728",
    Mode.DISTANCE_ONLY: "#1f77b4",
    Mode.JOINT: "#2ca02c",
    Mode.TWO_STAGE: "#9467bd",
}


def svg_curves(trajectories: Sequence[Trajectory], width: int = 640, panel_height: int = 240) -> str:
    """Two stacked panels, total loss L and position error, one polyline per mode."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    pad = 40
    panels = [("L", lambda r: r.breakdown.L), ("position error", lambda r: r.position_error)]
    height = len(panels) * (panel_height + pad) + pad
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    n_iter = max(len(t.records) for t in trajectories)
    for k, (name, value) in enumerate(panels):
        top = pad + k * (panel_height + pad)
        series = [[value(r) for r in t.records] for t in trajectories]
        finite = [v for s in series for v in s if math.isfinite(v)]
        lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
        if hi <= lo:
            hi = lo + 1.0
        x0, x1 = pad, width - pad
        out.append(f'<text x="{x0}" y="{top - 8}" font-family="sans-serif" font-size="12">{name} '
                   f'[{lo:.4g}, {hi:.4g}]</text>')
        out.append(f'<rect x="{x0}" y="{top}" width="{x1 - x0}" height="{panel_height}" fill="none" stroke="#888"/>')
        for t, s in zip(trajectories, series):
            pts = []
            for i, v in enumerate(s):
                if not math.isfinite(v):
                    continue
                x = x0 + (x1 - x0) * (i / max(1, n_iter - 1))
                y = top + panel_height * (1.0 - (v - lo) / (hi - lo))
                pts.append(f"{x:.2f},{y:.2f}")
            out.append(f'<polyline data-mode="{t.mode.value}" data-series="{name}" fill="none" '
                       f'stroke="{_COLORS[t.mode]}" stroke-width="1.5" points="{" ".join(pts)}"/>')
    for i, t in enumerate(trajectories):
        y = height - pad / 2 + 4
        x = pad + i * 140
        out.append(f'<text x="{x}" y="{y:.0f}" font-family="sans-serif" font-size="12" '
                   f'fill="{_COLORS[t.mode]}">{t.mode.value}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg_curves(trajectories: Sequence[Trajectory], path: Union[str, Path]) -> Path:
    return _write_text(Path(path), svg_curves(trajectories))


# -- protocol ----------------------------------------------------------------------

def _box_center_fn(scene: Scene, config: ExperimentConfig):
    def detect(pose: CameraPose) -> Vec3:
        cloud = capture_point_cloud(scene, pose, config.render, threads=config.threads, backend=config.backend)
        return detect_primary_object(cloud, config.detector_radius, config.detector_min_points).center
    return detect


def _run_mode(scene, config, prepared, initial_pose, mode, frame_dir):
    callback = None
    if frame_dir is not None:
        def callback(it, image, _mode=mode):
            imageio.write_ppm(image, frame_dir / f"{_mode.value}_{it:03d}.ppm")
    try:
        traj = optimize_pose(
            scene, initial_pose, prepared.image, prepared.box_center, prepared.d_t, config.for_mode(mode),
            target_position=config.target_position,
            box_center_fn=_box_center_fn(scene, config) if config.detect_per_iteration else None,
            frame_callback=callback, threads=config.threads, backend=config.backend,
        )
        return ModeResult(mode, traj)
    except OptimizationAborted as exc:
        log.warning("%s aborted: %s", mode.value, exc)
        return ModeResult(mode, exc.trajectory, f"numerical failure: {exc}")
    except (NonFiniteGradientError, NoObjectError, ZeroDivisionError) as exc:
        log.warning("%s failed: %s", mode.value, exc)
        return ModeResult(mode, None, f"{type(exc).__name__}: {exc}")


def run_all(config: ExperimentConfig, scene: Optional[Scene] = None,
            camera: Optional[CameraSpec] = None) -> ExperimentReport:
    """Run every configured mode from the shared target; write artifacts if ``out_dir`` is set."""
    if scene is None:
        scene, file_camera = load_experiment_scene(config)
        camera = camera or file_camera
    camera = camera or CameraSpec()
    prepared = prepare_target(scene, config, camera)
    initial_pose = replace(prepared.pose, position=config.initial_position)
    log.info("d_t=%.6f box center=%s input hash %s", prepared.d_t, prepared.box_center, prepared.content_hash())

    out = config.out_dir
    frame_dir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if config.frames:
            frame_dir = out / "frames"
            frame_dir.mkdir(exist_ok=True)

    def job(mode):
        return _run_mode(scene, config, prepared, initial_pose, mode, frame_dir)

    if config.parallel_modes and len(config.modes) > 1:
        with ThreadPoolExecutor(max_workers=len(config.modes)) as pool:
            results = list(pool.map(job, config.modes))
    else:
        results = [job(m) for m in config.modes]

    done = [r.trajectory for r in results if r.ok]
    rows = tuple(summarize(t) for t in done)
    files: list[Path] = []
    if out is not None:
        files.append(out / "target.ppm")
        imageio.write_ppm(prepared.image, files[-1])
        files.append(out / "target.pdif")
        imageio.write_pdif(prepared.image, files[-1])
        for traj in (r.trajectory for r in results if r.trajectory is not None):
            files.append(write_csv(traj, out / f"trajectory_{traj.mode.value}.csv"))
        for traj in done:
            final = render(scene, replace(initial_pose, position=traj.final_position), config.render,
                           threads=config.threads, backend=config.backend)
            files.append(out / f"final_{traj.mode.value}.ppm")
            imageio.write_ppm(final, files[-1])
            files.append(out / f"heatmap_{traj.mode.value}.ppm")
            imageio.write_ppm(imageio.diff_heatmap(final, prepared.image), files[-1])
        files.append(write_summary(rows, out / "summary.csv"))
        if done:
            files.append(write_svg_curves(done, out / "curves.svg"))
        files.append(_write_text(out / "report.txt", _report_text(prepared, results)))
        if frame_dir is not None:
            files.extend(sorted(frame_dir.iterdir()))
    return ExperimentReport(prepared.d_t, prepared.box_center, prepared.content_hash(), rows,
                            tuple(results), tuple(files))


def _report_text(prepared: PreparedTarget, results: Sequence[ModeResult]) -> str:
    lines = [f"d_t {_fmt(prepared.d_t)}",
             "box_center " + " ".join(_fmt(c) for c in prepared.box_center),
             f"input_sha256 {prepared.content_hash()}"]
    for r in results:
        lines.append(f"{r.mode.value} {'ok' if r.ok else 'FAILED ' + r.error}")
    return "\n".join(lines) + "\n"
