"""Euclidean radius clustering and axis-aligned box fitting on point clouds.

Stands in for a learned 3D detector: it yields the same thing the optimizer needs,
a box center and a confidence used only for argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from . import _cluster
from .geometry import Vec3
from .lidar import PointCloud

DEFAULT_RADIUS = 0.75
DEFAULT_MIN_POINTS = 20


class NoObjectError(RuntimeError):
    """No cluster survived filtering: the object is out of the sensor's view."""


@dataclass(frozen=True, eq=False)
class Cluster:
    indices: np.ndarray
    centroid: Vec3

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class Detection:
    box_min: Vec3
    box_max: Vec3
    center: Vec3
    confidence: float
    point_count: int

    def to_record(self) -> str:
        values = (*self.center, *self.box_min, *self.box_max, self.confidence)
        return " ".join(f"{v:.8f}" for v in values) + f" {self.point_count}"

    @classmethod
    def from_record(cls, line: str) -> "Detection":
        f = line.split()
        if len(f) != 11:
            raise ValueError(f"detection record needs 11 fields, got {len(f)}")
        v = [float(x) for x in f[:10]]
        return cls(tuple(v[3:6]), tuple(v[6:9]), tuple(v[0:3]), v[9], int(f[10]))


def _centroid(pts: np.ndarray) -> Vec3:
    # fsum makes the centroid independent of point order
    n = len(pts)
    return tuple(math.fsum(pts[:, k].tolist()) / n for k in range(3))


def cluster_points(cloud: PointCloud, radius: float = DEFAULT_RADIUS, min_points: int = DEFAULT_MIN_POINTS,
                   backend=None) -> list[Cluster]:
    """Connected components of the graph joining points at distance <= radius.

    Components smaller than ``min_points`` are dropped; the rest are ordered by
    descending size, then by centroid.
    """
    if not radius > 0.0:
        raise ValueError("radius must be > 0")
    if min_points < 1:
        raise ValueError("min_points must be >= 1")
    pts = cloud.points
    n = len(pts)
    if n == 0:
        return []
    labels = _cluster.component_labels(pts, radius, backend)
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    clusters = []
    for idx in np.split(order, bounds):
        if len(idx) >= min_points:
            idx = np.sort(idx)
            clusters.append(Cluster(idx, _centroid(pts[idx])))
    clusters.sort(key=lambda c: (-len(c), c.centroid))
    return clusters


def fit_box(cluster: Cluster, cloud: PointCloud) -> Detection:
    if len(cluster) == 0:
        raise ValueError("cannot fit a box to an empty cluster")
    pts = cloud.points[cluster.indices]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = 0.5 * (lo + hi)
    confidence = min(1.0, max(0.0, len(cluster) / len(cloud)))
    return Detection(tuple(lo.tolist()), tuple(hi.tolist()), tuple(center.tolist()), confidence, len(cluster))


def footprint_area(det: Detection) -> float:
    """Horizontal (x-z) extent of a box; +y is up."""
    return (det.box_max[0] - det.box_min[0]) * (det.box_max[2] - det.box_min[2])


def detect_primary_object(cloud: PointCloud, radius: float = DEFAULT_RADIUS, min_points: int = DEFAULT_MIN_POINTS,
                          remove_ground: bool = True) -> Detection:
    """Highest-confidence box after discarding the ground cluster.

    With two or more clusters, the one with the largest horizontal footprint is
    taken to be the ground and dropped.
    """
    if len(cloud) == 0:
        raise NoObjectError("point cloud is empty")
    clusters = cluster_points(cloud, radius, min_points)
    detections = [fit_box(c, cloud) for c in clusters]
    if remove_ground and len(detections) >= 2:
        areas = [footprint_area(d) for d in detections]
        del detections[int(np.argmax(areas))]
    if not detections:
        raise NoObjectError(
            f"no cluster with >= {min_points} points (radius {radius}) among {len(cloud)} points"
        )
    # clusters are size-ordered, so the first surviving one has the highest confidence
    return max(detections, key=lambda d: d.confidence)
