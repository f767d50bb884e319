"""Command line entry point.

    posefusion render     --out target.ppm
    posefusion lidar      --out cloud.txt
    posefusion detect     --cloud cloud.txt
    posefusion optimize   --mode two_stage --out run/
    posefusion experiment --out results/

Exit codes: 0 success, 2 bad configuration, 3 no object detected, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import imageio
from .detector import DEFAULT_MIN_POINTS, DEFAULT_RADIUS, NoObjectError, detect_primary_object
from .geometry import SceneError, vec3
from .harness import (ConfigError, ExperimentConfig, load_experiment_scene, prepare_target, run_all, summary_csv,
                      summarize, target_pose, write_csv)
from .lidar import capture_point_cloud, read_point_cloud, write_point_cloud
from .loss import ALL_MODES, LossParams, Mode
from .optimizer import OptimizationAborted, OptimizeConfig, optimize_pose
from .render import NonFiniteGradientError, RenderSettings, render

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_OBJECT = 3
EXIT_NUMERICAL = 4


def _resolution(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LxW such as 200x300, got {text!r}") from None
    if rows <= 0 or cols <= 0:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return rows, cols


def _triple(text: str):
    try:
        return vec3(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", type=Path, default=None, help="scene TOML (default: bundled car proxy)")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spp", type=int, default=16)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--res", type=_resolution, default=(200, 300), metavar="LxW")
    p.add_argument("--threads", type=int, default=None, help="render threads (default: all cores)")
    p.add_argument("--backend", choices=("cython", "python"), default=None)
    p.add_argument("--target", type=_triple, default=(8.0, 5.0, 14.0), metavar="X,Y,Z")
    p.add_argument("--translation", type=_triple, default=(12.0, 8.0, 9.0), metavar="X,Y,Z")
    p.add_argument("-v", "--verbose", action="store_true")


def _optim(p: argparse.ArgumentParser, modes_nargs) -> None:
    p.add_argument("--lr", type=float, default=0.15)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--mode", nargs=modes_nargs, choices=[m.value for m in ALL_MODES],
                   default=None if modes_nargs == "+" else Mode.TWO_STAGE.value)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS, help="detector cluster radius")
    p.add_argument("--min-points", type=int, default=DEFAULT_MIN_POINTS)
    p.add_argument("--detect-per-iteration", action="store_true",
                   help="re-detect the box from every camera pose instead of once from the target")
    p.add_argument("--frames", action="store_true", help="write a PPM per iteration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posefusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render the target view to PPM (plus a .pdif float sidecar)")
    _common(p)
    p.add_argument("--position", type=_triple, default=None, help="camera position (default: target)")

    p = sub.add_parser("lidar", help="capture the target-view point cloud")
    _common(p)
    p.add_argument("--position", type=_triple, default=None)

    p = sub.add_parser("detect", help="detect the primary object in a point cloud")
    _common(p)
    p.add_argument("--cloud", type=Path, default=None, help="point file (default: capture from the target)")
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--min-points", type=int, default=DEFAULT_MIN_POINTS)

    p = sub.add_parser("optimize", help="run one mode")
    _common(p)
    _optim(p, None)

    p = sub.add_parser("experiment", help="run all (or the given) modes and write every artifact")
    _common(p)
    _optim(p, "+")
    p.add_argument("--parallel-modes", action="store_true")
    return parser


def _config(args, modes) -> ExperimentConfig:
    settings = RenderSettings(args.spp, args.max_depth, args.seed, args.res)
    opt = OptimizeConfig(getattr(args, "lr", 0.15), getattr(args, "iters", 30),
                         LossParams(getattr(args, "alpha", 10.0), getattr(args, "tau", 2.0)), settings)
    return ExperimentConfig(
        scene_path=args.scene, target_position=args.target, initial_translation=args.translation,
        modes=modes, optimize=opt, out_dir=args.out,
        detector_radius=getattr(args, "radius", DEFAULT_RADIUS),
        detector_min_points=getattr(args, "min_points", DEFAULT_MIN_POINTS),
        detect_per_iteration=getattr(args, "detect_per_iteration", False),
        frames=getattr(args, "frames", False), parallel_modes=getattr(args, "parallel_modes", False),
        threads=args.threads, backend=args.backend,
    )


def _pose(args, config):
    scene, camera = load_experiment_scene(config)
    pose = target_pose(scene, camera, config)
    if getattr(args, "position", None) is not None:
        pose = replace(pose, position=args.position)
    return scene, camera, pose


def cmd_render(args) -> int:
    config = _config(args, ALL_MODES)
    scene, _, pose = _pose(args, config)
    image = render(scene, pose, config.render, threads=args.threads, backend=args.backend)
    out = args.out or Path("render.ppm")
    imageio.write_ppm(image, out)
    imageio.write_pdif(image, out.with_suffix(".pdif"))
    print(out)
    return EXIT_OK


def cmd_lidar(args) -> int:
    config = _config(args, ALL_MODES)
    scene, _, pose = _pose(args, config)
    cloud = capture_point_cloud(scene, pose, config.render, threads=args.threads, backend=args.backend)
    if args.out is None:
        write_point_cloud(cloud, sys.stdout)
    else:
        write_point_cloud(cloud, args.out)
        print(f"{len(cloud)} points -> {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    config = _config(args, ALL_MODES)
    if args.cloud is not None:
        cloud = read_point_cloud(args.cloud)
    else:
        scene, _, pose = _pose(args, config)
        cloud = capture_point_cloud(scene, pose, config.render, threads=args.threads, backend=args.backend)
    det = detect_primary_object(cloud, args.radius, args.min_points)
    line = det.to_record()
    if args.out is not None:
        args.out.write_text(line + "\n")
    print(line)
    return EXIT_OK


def cmd_optimize(args) -> int:
    mode = Mode(args.mode)
    config = _config(args, (mode,))
    scene, camera = load_experiment_scene(config)
    prepared = prepare_target(scene, config, camera)
    initial = replace(prepared.pose, position=config.initial_position)
    traj = optimize_pose(scene, initial, prepared.image, prepared.box_center, prepared.d_t,
                         config.for_mode(mode), target_position=config.target_position,
                         threads=args.threads, backend=args.backend)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_csv(traj, args.out / f"trajectory_{mode.value}.csv")
    sys.stdout.write(summary_csv([summarize(traj)]))
    return EXIT_OK


def cmd_experiment(args) -> int:
    modes = tuple(Mode(m) for m in args.mode) if args.mode else ALL_MODES
    config = _config(args, modes)
    report = run_all(config)
    sys.stdout.write(summary_csv(report.rows))
    print(f"d_t={report.d_t:.6f} box_center={report.box_center} inputs sha256={report.input_hash}")
    for mode, err in report.failures.items():
        print(f"{mode.value}: {err}", file=sys.stderr)
    return EXIT_NUMERICAL if report.failures else EXIT_OK


COMMANDS = {
    "render": cmd_render,
    "lidar": cmd_lidar,
    "detect": cmd_detect,
    "optimize": cmd_optimize,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NoObjectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_OBJECT
    except (OptimizationAborted, NonFiniteGradientError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, SceneError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
