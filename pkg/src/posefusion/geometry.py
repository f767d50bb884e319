"""Vectors, primitives, cameras, scalar ray intersection and scene files.

Coordinates are unitless scene units with +y up. The scalar :func:`intersect`
here is deliberately plain Python; the render kernels carry their own batched
intersectors and are checked against this one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import tomli_w

Vec3 = tuple[float, float, float]

DEFAULT_RAY_EPSILON = 1e-4
REFERENCE_TAG = "car"


class SceneError(ValueError):
    """Base class for scene parse/validation failures."""


class SceneParseError(SceneError):
    pass


class SceneValidationError(SceneError):
    pass


class DegenerateCameraError(ValueError):
    pass


# -- small vector helpers -------------------------------------------------------

def vec3(v: Sequence[float]) -> Vec3:
    x, y, z = v
    return (float(x), float(y), float(z))


def add(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def sub(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def scale(a: Vec3, s: float) -> Vec3:
    return (a[0] * s, a[1] * s, a[2] * s)


def dot(a: Vec3, b: Vec3) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def cross(a: Vec3, b: Vec3) -> Vec3:
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def norm(a: Vec3) -> float:
    return math.sqrt(dot(a, a))


def normalize(a: Vec3) -> Vec3:
    n = norm(a)
    return (a[0] / n, a[1] / n, a[2] / n)


# -- scene types ----------------------------------------------------------------

@dataclass(frozen=True)
class Material:
    albedo: Vec3 = (0.5, 0.5, 0.5)
    emission: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if any(not (0.0 <= c <= 1.0) for c in self.albedo):
            raise SceneValidationError(f"albedo components must lie in [0, 1], got {self.albedo}")
        if any(not (c >= 0.0 and math.isfinite(c)) for c in self.emission):
            raise SceneValidationError(f"emission must be finite and >= 0, got {self.emission}")

    @property
    def is_emissive(self) -> bool:
        return any(c > 0.0 for c in self.emission)


@dataclass(frozen=True)
class Primitive:
    material: Material = field(default_factory=Material)
    tag: str = ""

    kind = "abstract"
    kind_id = -1

    def packed(self) -> tuple[float, ...]:
        """Nine floats in the layout the render kernels expect."""
        raise NotImplementedError

    def surface_distance(self, p: Vec3) -> float:
        raise NotImplementedError

    def bounds(self) -> tuple[Vec3, Vec3]:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(Primitive):
    center: Vec3 = (0.0, 0.0, 0.0)
    radius: float = 1.0

    kind = "sphere"
    kind_id = 0

    def __post_init__(self):
        _check_finite("center", self.center)
        if not (self.radius > 0.0 and math.isfinite(self.radius)):
            raise SceneValidationError(f"sphere radius must be > 0, got {self.radius}")

    def packed(self):
        return (*self.center, self.radius, 0.0, 0.0, 0.0, 0.0, 0.0)

    def surface_distance(self, p):
        return abs(norm(sub(p, self.center)) - self.radius)

    def bounds(self):
        r = self.radius
        return sub(self.center, (r, r, r)), add(self.center, (r, r, r))

    def _intersect(self, o, d, t_min, t_max):
        oc = sub(o, self.center)
        b = dot(oc, d)
        c = dot(oc, oc) - self.radius * self.radius
        disc = b * b - c
        if disc < 0.0:
            return None
        sq = math.sqrt(disc)
        for t in (-b - sq, -b + sq):
            if t_min < t < t_max:
                p = add(o, scale(d, t))
                return t, scale(sub(p, self.center), 1.0 / self.radius)
        return None


@dataclass(frozen=True)
class Box(Primitive):
    min: Vec3 = (-1.0, -1.0, -1.0)
    max: Vec3 = (1.0, 1.0, 1.0)

    kind = "box"
    kind_id = 1

    def __post_init__(self):
        _check_finite("min", self.min)
        _check_finite("max", self.max)
        if not all(a < b for a, b in zip(self.min, self.max)):
            raise SceneValidationError(f"box min must be < max componentwise, got {self.min} / {self.max}")

    def packed(self):
        return (*self.min, *self.max, 0.0, 0.0, 0.0)

    def surface_distance(self, p):
        q = [max(lo - x, 0.0, x - hi) for x, lo, hi in zip(p, self.min, self.max)]
        outside = math.sqrt(sum(v * v for v in q))
        if outside > 0.0:
            return outside
        return min(min(x - lo, hi - x) for x, lo, hi in zip(p, self.min, self.max))

    def bounds(self):
        return self.min, self.max

    def _intersect(self, o, d, t_min, t_max):
        t_near, t_far = -math.inf, math.inf
        ax_near = ax_far = 0
        for k in range(3):
            if d[k] == 0.0:
                if o[k] < self.min[k] or o[k] > self.max[k]:
                    return None
                continue
            t1 = (self.min[k] - o[k]) / d[k]
            t2 = (self.max[k] - o[k]) / d[k]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > t_near:
                t_near, ax_near = t1, k
            if t2 < t_far:
                t_far, ax_far = t2, k
        if t_near > t_far:
            return None
        for t, ax in ((t_near, ax_near), (t_far, ax_far)):
            if t_min < t < t_max:
                n = [0.0, 0.0, 0.0]
                n[ax] = 1.0
                return t, tuple(n)
        return None


@dataclass(frozen=True)
class Triangle(Primitive):
    v0: Vec3 = (0.0, 0.0, 0.0)
    v1: Vec3 = (1.0, 0.0, 0.0)
    v2: Vec3 = (0.0, 1.0, 0.0)

    kind = "triangle"
    kind_id = 2

    def __post_init__(self):
        for name in ("v0", "v1", "v2"):
            _check_finite(name, getattr(self, name))
        if 0.5 * norm(cross(sub(self.v1, self.v0), sub(self.v2, self.v0))) <= 1e-12:
            raise SceneValidationError("triangle is degenerate (area <= 1e-12)")

    def packed(self):
        return (*self.v0, *self.v1, *self.v2)

    @property
    def normal(self) -> Vec3:
        return normalize(cross(sub(self.v1, self.v0), sub(self.v2, self.v0)))

    def surface_distance(self, p):
        return norm(sub(p, _closest_point_on_triangle(p, self.v0, self.v1, self.v2)))

    def bounds(self):
        pts = (self.v0, self.v1, self.v2)
        return tuple(min(c) for c in zip(*pts)), tuple(max(c) for c in zip(*pts))

    def _intersect(self, o, d, t_min, t_max):
        e1 = sub(self.v1, self.v0)
        e2 = sub(self.v2, self.v0)
        pv = cross(d, e2)
        det = dot(e1, pv)
        if abs(det) < 1e-15:
            return None
        inv = 1.0 / det
        tv = sub(o, self.v0)
        u = dot(tv, pv) * inv
        if u < 0.0 or u > 1.0:
            return None
        qv = cross(tv, e1)
        v = dot(d, qv) * inv
        if v < 0.0 or u + v > 1.0:
            return None
        t = dot(e2, qv) * inv
        if t_min < t < t_max:
            return t, self.normal
        return None


@dataclass(frozen=True)
class Plane(Primitive):
    point: Vec3 = (0.0, 0.0, 0.0)
    normal: Vec3 = (0.0, 1.0, 0.0)

    kind = "plane"
    kind_id = 3

    def __post_init__(self):
        _check_finite("point", self.point)
        _check_finite("normal", self.normal)
        n = norm(self.normal)
        if n < 1e-12:
            raise SceneValidationError("plane normal must be nonzero")
        if abs(n - 1.0) > 1e-9:
            object.__setattr__(self, "normal", normalize(self.normal))

    def packed(self):
        return (*self.point, *self.normal, 0.0, 0.0, 0.0)

    def surface_distance(self, p):
        return abs(dot(sub(p, self.point), self.normal))

    def bounds(self):
        inf = math.inf
        return (-inf, -inf, -inf), (inf, inf, inf)

    def _intersect(self, o, d, t_min, t_max):
        denom = dot(d, self.normal)
        if denom == 0.0:
            return None
        t = dot(sub(self.point, o), self.normal) / denom
        if t_min < t < t_max:
            return t, self.normal
        return None


PRIMITIVE_KINDS = {cls.kind: cls for cls in (Sphere, Box, Triangle, Plane)}


@dataclass(frozen=True)
class Scene:
    primitives: tuple[Primitive, ...] = ()
    background: Vec3 = (0.0, 0.0, 0.0)
    ray_epsilon: float = DEFAULT_RAY_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "background", vec3(self.background))
        if any(not (c >= 0.0 and math.isfinite(c)) for c in self.background):
            raise SceneValidationError(f"background must be finite and >= 0, got {self.background}")
        if not any(p.material.is_emissive for p in self.primitives) and not any(self.background):
            raise SceneValidationError("scene has no light: need an emissive primitive or a nonzero background")
        if not self.ray_epsilon >= 0.0:
            raise SceneValidationError("ray_epsilon must be >= 0")

    def tagged(self, tag: str) -> list[Primitive]:
        return [p for p in self.primitives if p.tag == tag]

    def require_reference(self, tag: str = REFERENCE_TAG) -> None:
        if not self.tagged(tag):
            raise SceneValidationError(f"scene has no primitive tagged {tag!r}")

    def reference_centroid(self, tag: str = REFERENCE_TAG) -> Vec3:
        """Center of the axis-aligned bounds of every primitive carrying ``tag``."""
        prims = self.tagged(tag)
        if not prims:
            raise SceneValidationError(f"scene has no primitive tagged {tag!r}")
        lo = [min(p.bounds()[0][k] for p in prims) for k in range(3)]
        hi = [max(p.bounds()[1][k] for p in prims) for k in range(3)]
        return tuple(0.5 * (a + b) for a, b in zip(lo, hi))


@dataclass(frozen=True)
class Ray:
    origin: Vec3
    direction: Vec3

    def __post_init__(self):
        if abs(norm(self.direction) - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got {self.direction}")

    def at(self, t: float) -> Vec3:
        return add(self.origin, scale(self.direction, t))


@dataclass(frozen=True)
class Hit:
    t: float
    point: Vec3
    normal: Vec3
    index: int
    tag: str


@dataclass(frozen=True)
class CameraPose:
    position: Vec3
    right: Vec3
    up: Vec3
    forward: Vec3
    fov_y: float = 45.0
    resolution: tuple[int, int] = (200, 300)

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        rows, cols = self.resolution
        if rows <= 0 or cols <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if not 0.0 < self.fov_y < 180.0:
            raise ValueError(f"fov_y must lie in (0, 180), got {self.fov_y}")
        basis = (self.right, self.up, self.forward)
        for i, a in enumerate(basis):
            for j, b in enumerate(basis):
                if abs(dot(a, b) - (1.0 if i == j else 0.0)) > 1e-9:
                    raise ValueError("camera basis must be orthonormal")

    @property
    def rows(self) -> int:
        return self.resolution[0]

    @property
    def cols(self) -> int:
        return self.resolution[1]

    def with_resolution(self, resolution: tuple[int, int]) -> "CameraPose":
        return replace(self, resolution=tuple(resolution))


# -- operations -----------------------------------------------------------------

def intersect(ray: Ray, scene: Scene, t_min: float = 0.0, t_max: float = math.inf) -> Optional[Hit]:
    """Nearest hit with ``t_min < t < t_max``; ties go to the lower primitive index."""
    if t_min < 0.0 or not t_max > t_min:
        raise ValueError("need 0 <= t_min < t_max")
    best = None
    best_t = t_max
    for index, prim in enumerate(scene.primitives):
        res = prim._intersect(ray.origin, ray.direction, t_min, best_t)
        if res is not None and res[0] < best_t:
            best_t = res[0]
            best = (index, res[1])
    if best is None:
        return None
    index, normal = best
    if dot(normal, ray.direction) > 0.0:
        normal = scale(normal, -1.0)
    return Hit(best_t, ray.at(best_t), normal, index, scene.primitives[index].tag)


def make_look_at(
    position: Sequence[float],
    look_target: Sequence[float],
    up_hint: Sequence[float] = (0.0, 1.0, 0.0),
    fov_y: float = 45.0,
    resolution: tuple[int, int] = (200, 300),
) -> CameraPose:
    position, look_target, up_hint = vec3(position), vec3(look_target), vec3(up_hint)
    view = sub(look_target, position)
    if norm(view) < 1e-12:
        raise DegenerateCameraError("camera position coincides with the look target")
    forward = normalize(view)
    side = cross(forward, up_hint)
    if norm(side) < 1e-12:
        raise DegenerateCameraError("up hint is parallel to the view direction")
    right = normalize(side)
    up = cross(right, forward)
    return CameraPose(position, right, up, forward, fov_y, tuple(resolution))


def translate(pose: CameraPose, delta: Sequence[float]) -> CameraPose:
    return replace(pose, position=add(pose.position, vec3(delta)))


# -- scene files ----------------------------------------------------------------

_SHAPE_FIELDS = {
    "sphere": ("center", "radius"),
    "box": ("min", "max"),
    "triangle": ("v0", "v1", "v2"),
    "plane": ("point", "normal"),
}


def load_scene(config_text: str, require_reference: bool = True) -> Scene:
    """Parse a TOML scene description (see README for the schema)."""
    try:
        doc = tomllib.loads(config_text)
    except tomllib.TOMLDecodeError as exc:
        raise SceneParseError(f"scene parse error: {exc}") from exc

    background = _vector(doc, "background", "background", default=(0.0, 0.0, 0.0))
    eps = _number(doc, "ray_epsilon", "ray_epsilon", default=DEFAULT_RAY_EPSILON)
    entries = doc.get("primitive", [])
    if not isinstance(entries, list):
        raise SceneParseError("'primitive' must be an array of tables ([[primitive]])")

    prims = []
    for i, entry in enumerate(entries):
        where = f"primitive[{i}]"
        kind = entry.get("kind")
        if kind not in _SHAPE_FIELDS:
            raise SceneParseError(f"{where}.kind: expected one of {sorted(_SHAPE_FIELDS)}, got {kind!r}")
        try:
            material = Material(
                albedo=_vector(entry, "albedo", where, default=(0.5, 0.5, 0.5)),
                emission=_vector(entry, "emission", where, default=(0.0, 0.0, 0.0)),
            )
            shape = {}
            for name in _SHAPE_FIELDS[kind]:
                if name == "radius":
                    shape[name] = _number(entry, name, where)
                else:
                    shape[name] = _vector(entry, name, where)
            tag = entry.get("tag", "")
            if not isinstance(tag, str):
                raise SceneParseError(f"{where}.tag: expected a string")
            prims.append(PRIMITIVE_KINDS[kind](material=material, tag=tag, **shape))
        except SceneValidationError as exc:
            raise SceneValidationError(f"{where}: {exc}") from None

    scene = Scene(tuple(prims), background, eps)
    if require_reference:
        scene.require_reference()
    return scene


def dump_scene(scene: Scene) -> str:
    """Serialize to the same TOML schema; floats are written with round-trip precision."""
    doc = {"background": list(scene.background), "ray_epsilon": scene.ray_epsilon, "primitive": []}
    for p in scene.primitives:
        entry = {"kind": p.kind}
        for name in _SHAPE_FIELDS[p.kind]:
            value = getattr(p, name)
            entry[name] = float(value) if name == "radius" else list(value)
        entry["albedo"] = list(p.material.albedo)
        entry["emission"] = list(p.material.emission)
        entry["tag"] = p.tag
        doc["primitive"].append(entry)
    return tomli_w.dumps(doc)


def load_scene_file(path: Union[str, Path], require_reference: bool = True) -> Scene:
    return load_scene(Path(path).read_text(), require_reference=require_reference)


def default_scene_path() -> Path:
    return Path(str(resources.files("posefusion") / "scenes" / "car_proxy.toml"))


def default_scene() -> Scene:
    return load_scene_file(default_scene_path())


def _number(doc, key, where, default=None) -> float:
    if key not in doc:
        if default is None:
            raise SceneParseError(f"{where}.{key}: missing required field")
        return float(default)
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneParseError(f"{where}.{key}: expected a number, got {value!r}")
    return float(value)


def _vector(doc, key, where, default=None) -> Vec3:
    if key not in doc:
        if default is None:
            raise SceneParseError(f"{where}.{key}: missing required field")
        return vec3(default)
    value = doc[key]
    if (
        not isinstance(value, list)
        or len(value) != 3
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
    ):
        raise SceneParseError(f"{where}.{key}: expected a list of 3 numbers, got {value!r}")
    return vec3(value)


def _check_finite(name, v):
    if len(v) != 3 or not all(math.isfinite(c) for c in v):
        raise SceneValidationError(f"{name} must be 3 finite numbers, got {v}")


def _closest_point_on_triangle(p, a, b, c):
    # Ericson, Real-Time Collision Detection, 5.1.5
    ab, ac, ap = sub(b, a), sub(c, a), sub(p, a)
    d1, d2 = dot(ab, ap), dot(ac, ap)
    if d1 <= 0 and d2 <= 0:
        return a
    bp = sub(p, b)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return add(a, scale(ab, d1 / (d1 - d3)))
    cp = sub(p, c)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return add(a, scale(ac, d2 / (d2 - d6)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return add(b, scale(sub(c, b), w))
    denom = 1.0 / (va + vb + vc)
    v, w = vb * denom, vc * denom
    return add(a, add(scale(ab, v), scale(ac, w)))
