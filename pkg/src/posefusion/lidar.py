"""Simulated Lidar: first-hit points of the camera's primary rays, plus the text format."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, TextIO, Union

import numpy as np

from . import render as _render
from .geometry import CameraPose, Scene, Vec3


class PointCloudParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    source_pose: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def capture_point_cloud(scene: Scene, pose: CameraPose, settings: _render.RenderSettings,
                        threads=None, backend=None) -> PointCloud:
    """World-space hit points, ordered pixel-major then by sample; misses are dropped."""
    _, _, pts, hit = _render.render_raw(scene, pose, settings, want_points=True, threads=threads, backend=backend)
    return PointCloud(pts[hit], pose.position)


def format_point(p) -> str:
    return f"{p[0]:.8f} {p[1]:.8f} {p[2]:.8f}\n"


def write_point_cloud(cloud: PointCloud, sink: Union[str, Path, TextIO]) -> None:
    """One ``x y z`` line per point, eight decimals, no header."""
    text = "".join(format_point(p) for p in cloud.points.tolist())
    if isinstance(sink, (str, Path)):
        with open(sink, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sink.write(text)


def read_point_cloud(source: Union[str, Path, TextIO], source_pose: Optional[Vec3] = None) -> PointCloud:
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    pts = []
    for number, line in enumerate(lines, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 3:
            raise PointCloudParseError(number, f"expected 3 values, got {len(fields)}")
        try:
            pts.append([float(v) for v in fields])
        except ValueError as exc:
            raise PointCloudParseError(number, str(exc)) from None
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3), source_pose or (0.0, 0.0, 0.0))


def point_cloud_text(cloud: PointCloud) -> str:
    buf = io.StringIO()
    write_point_cloud(cloud, buf)
    return buf.getvalue()
