"""Pure numpy render kernel: batched Lambertian path tracing with dual numbers.

This is the fallback used when the compiled ``_ckernel`` extension is missing, and
the readable reference for it. Both kernels take the same packed scene/camera
arrays and draw the same counter-based random numbers, so they agree to rounding.

Path topology (which primitive a ray hits, which root, visibility of a light
sample) is decided on primal values only; derivatives flow through the
continuous quantities along the frozen path.
"""

from __future__ import annotations

import math

import numpy as np

from .dual import Dual3, DVec3, where
from .sampling import DIM_BOUNCE0, DIMS_PER_BOUNCE, CounterSampler

SPHERE, BOX, TRIANGLE, PLANE = 0, 1, 2, 3
INV_PI = 1.0 / math.pi
TWO_PI = 2.0 * math.pi
CHUNK = 1 << 15


def _const_vec(rows: np.ndarray) -> DVec3:
    return DVec3(Dual3(rows[:, 0]), Dual3(rows[:, 1]), Dual3(rows[:, 2]))


def _primal(v: DVec3) -> DVec3:
    return DVec3(Dual3(v.x.value), Dual3(v.y.value), Dual3(v.z.value))


def _hit_sphere(data, o: DVec3, d: DVec3, t_min):
    c = DVec3.const(data[0:3])
    r = data[3]
    oc = o - c
    b = oc.dot(d)
    cc = oc.dot(oc) - r * r
    disc = b * b - cc
    ok = disc.value >= 0.0
    sq = where(ok, disc, 1.0).sqrt()
    t0 = -b - sq
    t1 = -b + sq
    t = where(t0.value > t_min, t0, t1)
    ok &= t.value > t_min
    normal = (o + d.scale(t) - c).scale(1.0 / r)
    return t, normal, ok


def _hit_box(data, o: DVec3, d: DVec3, t_min):
    lo, hi = data[0:3], data[3:6]
    comps_o = (o.x, o.y, o.z)
    comps_d = (d.x, d.y, d.z)
    miss = np.zeros(np.shape(o.x.value), dtype=bool)
    t_near = t_far = None
    ax_near = ax_far = None
    for k in range(3):
        ok_, dk = comps_o[k], comps_d[k]
        zero = dk.value == 0.0
        inside = (ok_.value >= lo[k]) & (ok_.value <= hi[k])
        miss |= zero & ~inside
        inv = 1.0 / where(zero, 1.0, dk)
        t1 = (lo[k] - ok_) * inv
        t2 = (hi[k] - ok_) * inv
        swap = t1.value > t2.value
        tlo = where(zero, -np.inf, where(swap, t2, t1))
        thi = where(zero, np.inf, where(swap, t1, t2))
        if k == 0:
            t_near, t_far = tlo, thi
            ax_near = np.zeros(tlo.value.shape, dtype=np.int64)
            ax_far = np.zeros(tlo.value.shape, dtype=np.int64)
        else:
            upd = tlo.value > t_near.value
            t_near = where(upd, tlo, t_near)
            ax_near = np.where(upd, k, ax_near)
            upd = thi.value < t_far.value
            t_far = where(upd, thi, t_far)
            ax_far = np.where(upd, k, ax_far)
    use_near = t_near.value > t_min
    t = where(use_near, t_near, t_far)
    axis = np.where(use_near, ax_near, ax_far)
    ok = ~miss & (t_near.value <= t_far.value) & (t.value > t_min)
    unit = np.eye(3)[axis]
    return t, _const_vec(unit), ok


def _hit_triangle(data, o: DVec3, d: DVec3, t_min):
    v0 = DVec3.const(data[0:3])
    e1 = DVec3.const(data[3:6] - data[0:3])
    e2 = DVec3.const(data[6:9] - data[0:3])
    pv = d.cross(e2)
    det = e1.dot(pv)
    ok = np.abs(det.value) >= 1e-15
    inv = 1.0 / where(ok, det, 1.0)
    tv = o - v0
    u = tv.dot(pv) * inv
    qv = tv.cross(e1)
    v = d.dot(qv) * inv
    t = e2.dot(qv) * inv
    ok &= (u.value >= 0.0) & (u.value <= 1.0) & (v.value >= 0.0) & (u.value + v.value <= 1.0)
    ok &= t.value > t_min
    n = np.cross(data[3:6] - data[0:3], data[6:9] - data[0:3])
    n = n / math.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
    shape = np.shape(t.value)
    return t, _const_vec(np.broadcast_to(n, shape + (3,))), ok


def _hit_plane(data, o: DVec3, d: DVec3, t_min):
    p0 = DVec3.const(data[0:3])
    n = DVec3.const(data[3:6])
    denom = d.dot(n)
    ok = denom.value != 0.0
    t = (p0 - o).dot(n) / where(ok, denom, 1.0)
    ok &= t.value > t_min
    shape = np.shape(t.value)
    return t, _const_vec(np.broadcast_to(data[3:6], shape + (3,))), ok


_HITTERS = {SPHERE: _hit_sphere, BOX: _hit_box, TRIANGLE: _hit_triangle, PLANE: _hit_plane}


def intersect_batch(pack, o: DVec3, d: DVec3, t_min, t_max=np.inf):
    """Nearest hit per lane. Returns (hit mask, index, t, front-facing normal)."""
    n = np.shape(o.x.value)[0]
    best_t = np.full(n, t_max, dtype=float)
    best_i = np.full(n, -1, dtype=np.int64)
    results = []
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for k, kind in enumerate(pack["kind"]):
            t, normal, ok = _HITTERS[int(kind)](pack["data"][k], o, d, t_min)
            closer = ok & (t.value < best_t)
            best_t = np.where(closer, t.value, best_t)
            best_i = np.where(closer, k, best_i)
            results.append((t, normal))
        hit = best_i >= 0
        t = Dual3(best_t)
        normal = DVec3(0.0, 0.0, 0.0)
        for k, (tk, nk) in enumerate(results):
            sel = best_i == k
            t = where(sel, tk, t)
            normal = nk.select(sel, normal)
        flip = normal.dot(d).value > 0.0
        normal = normal.scale(where(flip, -1.0, 1.0))
    return hit, best_i, t, normal


def _onb(n: DVec3):
    sign = np.copysign(1.0, n.z.value)
    a = -1.0 / (n.z + sign)
    b = n.x * n.y * a
    b1 = DVec3(n.x * n.x * a * sign + 1.0, b * sign, -(n.x * sign))
    b2 = DVec3(b, n.y * n.y * a + sign, -n.y)
    return b1, b2


def _to_world(n: DVec3, lx, ly, lz) -> DVec3:
    b1, b2 = _onb(n)
    return b1.scale(lx) + b2.scale(ly) + n.scale(lz)


def trace(pack, o: DVec3, d: DVec3, sampler: CounterSampler, start_depth: int, max_depth: int, record_points=False):
    """Estimate radiance along each lane's ray. Returns (rgb Dual3 triple, points, hit mask)."""
    # inactive lanes carry garbage (inf/nan) that is masked out before accumulation
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _trace(pack, o, d, sampler, start_depth, max_depth, record_points)


def _trace(pack, o, d, sampler, start_depth, max_depth, record_points):
    m = np.shape(o.x.value)[0]
    bg = pack["background"]
    light_ids = pack["lights"]
    n_lights = len(light_ids)
    nee_light = np.zeros(len(pack["kind"]), dtype=bool)
    nee_light[light_ids] = True
    eps = pack["eps"]

    L = [Dual3(np.zeros(m)), Dual3(np.zeros(m)), Dual3(np.zeros(m))]
    beta = np.ones((m, 3))
    active = np.ones(m, dtype=bool)
    points = hit0 = None

    for depth in range(start_depth, max_depth + 1):
        t_min = 0.0 if depth == 0 else eps
        hit, idx, t, normal = intersect_batch(pack, o, d, t_min)
        miss = active & ~hit
        for c in range(3):
            L[c] = L[c] + np.where(miss, beta[:, c] * bg[c], 0.0)
        active &= hit
        safe = np.where(active, idx, 0)
        p = o + d.scale(t)
        if depth == 0 and record_points:
            hit0 = active.copy()
            points = np.where(hit0[:, None], p.value(), 0.0)

        if not active.any():
            break
        # a light reached by a bounce ray was already counted by the light sample at that vertex
        emit = pack["emission"][safe]
        count_emit = active & ((depth == start_depth) | ~nee_light[safe])
        for c in range(3):
            L[c] = L[c] + np.where(count_emit, beta[:, c] * emit[:, c], 0.0)
        if depth == max_depth:
            break

        albedo = pack["albedo"][safe]
        active &= albedo.max(axis=1) > 0.0
        if not active.any():
            break
        base = DIM_BOUNCE0 + DIMS_PER_BOUNCE * depth

        if n_lights:
            pick = np.minimum((sampler.uniform(base) * n_lights).astype(np.int64), n_lights - 1)
            li = light_ids[pick]
            centre = pack["data"][li, 0:3]
            radius = pack["data"][li, 3]
            with np.errstate(divide="ignore", invalid="ignore"):
                wc = _const_vec(centre) - p
                dist2 = wc.dot(wc)
                outside = active & (dist2.value > radius * radius)
                dist2 = where(outside, dist2, 1.0)
                w = wc.scale(1.0 / dist2.sqrt())
                sin2max = (radius * radius) / dist2
                cosmax = where(outside, 1.0 - sin2max, 0.0).sqrt()
                one_minus = sin2max / (cosmax + 1.0)
                cos_t = 1.0 - one_minus * sampler.uniform(base + 1)
                sin2 = 1.0 - cos_t * cos_t
                sin_t = where(sin2.value > 0.0, sin2, 1.0).sqrt()
                sin_t = where(sin2.value > 0.0, sin_t, 0.0)
                phi = TWO_PI * sampler.uniform(base + 2)
                wl = _to_world(w, sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t)
                cos_x = normal.dot(wl)
                ok = outside & (cos_x.value > 0.0)
                shadow_hit, shadow_idx, _, _ = intersect_batch(pack, _primal(p), _primal(wl), eps)
                ok &= shadow_hit & (shadow_idx == li)
                solid = one_minus * TWO_PI
                e_l = pack["emission"][li]
                for c in range(3):
                    weight = beta[:, c] * albedo[:, c] * e_l[:, c] * (INV_PI * n_lights)
                    L[c] = L[c] + where(ok, cos_x * solid * weight, 0.0)

        u1 = sampler.uniform(base + 3)
        phi = TWO_PI * sampler.uniform(base + 4)
        r = np.sqrt(u1)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = _to_world(normal, r * np.cos(phi), r * np.sin(phi), np.sqrt(1.0 - u1))
        o = p
        beta = beta * albedo

    return L, points, hit0


def render_kernel(pack, cam, rows, cols, spp, max_depth, seed, want_grad=False, want_points=False):
    """Render every pixel. Returns (image, jacobian or None, points or None, hit mask or None).

    ``jacobian[i, j, c, k]`` is d(pixel channel c)/d(camera coordinate k).
    """
    n_pix = rows * cols
    total = n_pix * spp
    img = np.zeros((n_pix, 3))
    jac = np.zeros((n_pix, 3, 3)) if want_grad else None
    pts = np.zeros((total, 3)) if want_points else None
    mask = np.zeros(total, dtype=bool) if want_points else None
    position = np.asarray(cam["position"], dtype=float)
    right, up, forward = (np.asarray(cam[k], dtype=float) for k in ("right", "up", "forward"))
    tan_half, aspect = cam["tan_half"], cam["aspect"]

    for start in range(0, total, CHUNK):
        flat = np.arange(start, min(start + CHUNK, total), dtype=np.int64)
        pix = flat // spp
        smp = flat % spp
        sampler = CounterSampler(seed, pix, smp)
        ju, jv = sampler.uniform(0), sampler.uniform(1)
        i, j = pix // cols, pix % cols
        sx = ((j + ju) / cols * 2.0 - 1.0) * aspect * tan_half
        sy = (1.0 - (i + jv) / rows * 2.0) * tan_half
        raw = forward[None, :] + sx[:, None] * right[None, :] + sy[:, None] * up[None, :]
        nrm = np.sqrt(raw[:, 0] * raw[:, 0] + raw[:, 1] * raw[:, 1] + raw[:, 2] * raw[:, 2])
        dirs = raw / nrm[:, None]
        m = len(flat)
        if want_grad:
            o = DVec3(
                Dual3.variable(np.full(m, position[0]), 0, (m,)),
                Dual3.variable(np.full(m, position[1]), 1, (m,)),
                Dual3.variable(np.full(m, position[2]), 2, (m,)),
            )
        else:
            o = _const_vec(np.broadcast_to(position, (m, 3)))
        L, p, h = trace(pack, o, _const_vec(dirs), sampler, 0, max_depth, want_points)
        inv_spp = 1.0 / spp
        for c in range(3):
            np.add.at(img[:, c], pix, L[c].value)
            if want_grad:
                for k in range(3):
                    np.add.at(jac[:, c, k], pix, L[c].grad()[k])
        if want_points:
            pts[flat] = p
            mask[flat] = h

    img *= inv_spp
    img = img.reshape(rows, cols, 3)
    if want_grad:
        jac = (jac * inv_spp).reshape(rows, cols, 3, 3)
    return img, jac, pts, mask
