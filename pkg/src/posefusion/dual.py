"""Forward-mode dual numbers carrying three partials (d/dx, d/dy, d/dz).

Values may be Python floats or numpy arrays; the partials have an extra leading
axis of length 3. ``partials=None`` marks a constant, which keeps the primal-only
code path cheap.
"""

from __future__ import annotations

import numpy as np


class Dual3:
    __slots__ = ("value", "partials")
    __array_ufunc__ = None  # make ndarray (op) Dual3 defer to our reflected operators

    def __init__(self, value, partials=None):
        self.value = value
        self.partials = partials

    @classmethod
    def variable(cls, value, axis: int, shape=()) -> "Dual3":
        """Seed a coordinate: unit partial along ``axis``."""
        p = np.zeros((3,) + tuple(shape))
        p[axis] = 1.0
        return cls(value, p)

    @staticmethod
    def lift(x) -> "Dual3":
        return x if isinstance(x, Dual3) else Dual3(x)

    def __repr__(self) -> str:
        return f"Dual3({self.value!r}, {self.partials!r})"

    def __neg__(self):
        return Dual3(-self.value, None if self.partials is None else -self.partials)

    def __add__(self, other):
        other = Dual3.lift(other)
        return Dual3(self.value + other.value, _padd(self.partials, other.partials))

    __radd__ = __add__

    def __sub__(self, other):
        other = Dual3.lift(other)
        if other.partials is None:
            p = self.partials
        elif self.partials is None:
            p = -other.partials
        else:
            p = self.partials - other.partials
        return Dual3(self.value - other.value, p)

    def __rsub__(self, other):
        return Dual3.lift(other) - self

    def __mul__(self, other):
        other = Dual3.lift(other)
        a, b = self, other
        return Dual3(a.value * b.value, _padd(_pscale(a.partials, b.value), _pscale(b.partials, a.value)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Dual3.lift(other)
        inv = 1.0 / other.value
        value = self.value * inv
        p = _pscale(self.partials, inv)
        if other.partials is not None:
            p = _padd(p, _pscale(other.partials, -value * inv))
        return Dual3(value, p)

    def __rtruediv__(self, other):
        return Dual3.lift(other) / self

    def sqrt(self) -> "Dual3":
        r = np.sqrt(self.value)
        if self.partials is None:
            return Dual3(r)
        return Dual3(r, self.partials * (0.5 / r))

    def grad(self) -> np.ndarray:
        if self.partials is None:
            return np.zeros((3,) + np.shape(self.value))
        return self.partials


def _padd(p, q):
    if p is None:
        return q
    if q is None:
        return p
    return p + q


def _pscale(p, s):
    return None if p is None else p * s


def where(mask, a, b) -> Dual3:
    """Elementwise select on the primal mask; partials follow the chosen branch."""
    a, b = Dual3.lift(a), Dual3.lift(b)
    value = np.where(mask, a.value, b.value)
    if a.partials is None and b.partials is None:
        return Dual3(value)
    shape = np.shape(value)
    pa = a.partials if a.partials is not None else np.zeros((3,) + shape)
    pb = b.partials if b.partials is not None else np.zeros((3,) + shape)
    return Dual3(value, np.where(mask, pa, pb))


class DVec3:
    """Three Dual3 components; mirrors the struct-of-duals layout of the C kernel."""

    __slots__ = ("x", "y", "z")

    def __init__(self, x, y, z):
        self.x = Dual3.lift(x)
        self.y = Dual3.lift(y)
        self.z = Dual3.lift(z)

    @classmethod
    def const(cls, v) -> "DVec3":
        v = np.asarray(v, dtype=float)
        return cls(Dual3(v[..., 0]), Dual3(v[..., 1]), Dual3(v[..., 2]))

    def __add__(self, o):
        return DVec3(self.x + o.x, self.y + o.y, self.z + o.z)

    def __sub__(self, o):
        return DVec3(self.x - o.x, self.y - o.y, self.z - o.z)

    def __neg__(self):
        return DVec3(-self.x, -self.y, -self.z)

    def scale(self, s) -> "DVec3":
        return DVec3(self.x * s, self.y * s, self.z * s)

    def dot(self, o) -> Dual3:
        return self.x * o.x + self.y * o.y + self.z * o.z

    def cross(self, o) -> "DVec3":
        return DVec3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )

    def normalized(self) -> "DVec3":
        inv = 1.0 / self.dot(self).sqrt()
        return self.scale(inv)

    def value(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.x.value, self.y.value, self.z.value), axis=-1)

    def select(self, mask, other: "DVec3") -> "DVec3":
        return DVec3(where(mask, self.x, other.x), where(mask, self.y, other.y), where(mask, self.z, other.z))
