# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled render kernel; a line-for-line port of ``_pykernel``.

Arithmetic is ordered exactly as in the numpy kernel so both backends produce
the same numbers up to libm differences in sin/cos. Pixels are independent and
use counter-based random numbers, so the thread count never changes the output.
"""

import numpy as np
from cython.parallel cimport prange
from libc.math cimport sqrt, sin, cos, copysign, fabs, INFINITY
from libc.stdint cimport uint64_t, int64_t, uint8_t

cdef double INV_PI = 0.31830988618379067154
cdef double TWO_PI = 6.28318530717958647692
cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef int DIM_BOUNCE0 = 2
cdef int DIMS_PER_BOUNCE = 5


cdef struct D:
    double v
    double g0
    double g1
    double g2

cdef struct DV:
    D x
    D y
    D z

cdef struct SceneC:
    int nprim
    int nlights
    const int64_t* kind
    const double* data
    const double* albedo
    const double* emission
    const int64_t* lights
    const uint8_t* nee
    double bg0
    double bg1
    double bg2
    double eps


# -- counter RNG ---------------------------------------------------------------

cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)

cdef inline double uni(uint64_t h, uint64_t sample, int dim) noexcept nogil:
    cdef uint64_t r = mix64(h ^ ((sample << 8) | <uint64_t>dim))
    return <double>(r >> 11) * (1.0 / 9007199254740992.0)


# -- dual arithmetic -------------------------------------------------------------

cdef inline D dc(double v) noexcept nogil:
    cdef D r
    r.v = v
    r.g0 = 0.0
    r.g1 = 0.0
    r.g2 = 0.0
    return r

cdef inline D dadd(D a, D b) noexcept nogil:
    cdef D r
    r.v = a.v + b.v
    r.g0 = a.g0 + b.g0
    r.g1 = a.g1 + b.g1
    r.g2 = a.g2 + b.g2
    return r

cdef inline D daddf(D a, double s) noexcept nogil:
    a.v = a.v + s
    return a

cdef inline D dsub(D a, D b) noexcept nogil:
    cdef D r
    r.v = a.v - b.v
    r.g0 = a.g0 - b.g0
    r.g1 = a.g1 - b.g1
    r.g2 = a.g2 - b.g2
    return r

cdef inline D drsubf(double s, D a) noexcept nogil:
    # s - a
    cdef D r
    r.v = s - a.v
    r.g0 = -a.g0
    r.g1 = -a.g1
    r.g2 = -a.g2
    return r

cdef inline D dneg(D a) noexcept nogil:
    cdef D r
    r.v = -a.v
    r.g0 = -a.g0
    r.g1 = -a.g1
    r.g2 = -a.g2
    return r

cdef inline D dmul(D a, D b) noexcept nogil:
    cdef D r
    r.v = a.v * b.v
    r.g0 = a.g0 * b.v + b.g0 * a.v
    r.g1 = a.g1 * b.v + b.g1 * a.v
    r.g2 = a.g2 * b.v + b.g2 * a.v
    return r

cdef inline D dmulf(D a, double s) noexcept nogil:
    cdef D r
    r.v = a.v * s
    r.g0 = a.g0 * s
    r.g1 = a.g1 * s
    r.g2 = a.g2 * s
    return r

cdef inline D ddiv(D a, D b) noexcept nogil:
    cdef double inv = 1.0 / b.v
    cdef D r
    r.v = a.v * inv
    cdef double k = -r.v * inv
    r.g0 = a.g0 * inv + b.g0 * k
    r.g1 = a.g1 * inv + b.g1 * k
    r.g2 = a.g2 * inv + b.g2 * k
    return r

cdef inline D drdivf(double s, D b) noexcept nogil:
    # s / b
    cdef double inv = 1.0 / b.v
    cdef D r
    r.v = s * inv
    cdef double k = -r.v * inv
    r.g0 = b.g0 * k
    r.g1 = b.g1 * k
    r.g2 = b.g2 * k
    return r

cdef inline D dsqrt(D a) noexcept nogil:
    cdef D r
    r.v = sqrt(a.v)
    cdef double k = 0.5 / r.v
    r.g0 = a.g0 * k
    r.g1 = a.g1 * k
    r.g2 = a.g2 * k
    return r

cdef inline DV vc(double x, double y, double z) noexcept nogil:
    cdef DV r
    r.x = dc(x)
    r.y = dc(y)
    r.z = dc(z)
    return r

cdef inline DV vadd(DV a, DV b) noexcept nogil:
    cdef DV r
    r.x = dadd(a.x, b.x)
    r.y = dadd(a.y, b.y)
    r.z = dadd(a.z, b.z)
    return r

cdef inline DV vsub(DV a, DV b) noexcept nogil:
    cdef DV r
    r.x = dsub(a.x, b.x)
    r.y = dsub(a.y, b.y)
    r.z = dsub(a.z, b.z)
    return r

cdef inline DV vscale(DV a, D s) noexcept nogil:
    cdef DV r
    r.x = dmul(a.x, s)
    r.y = dmul(a.y, s)
    r.z = dmul(a.z, s)
    return r

cdef inline DV vscalef(DV a, double s) noexcept nogil:
    cdef DV r
    r.x = dmulf(a.x, s)
    r.y = dmulf(a.y, s)
    r.z = dmulf(a.z, s)
    return r

cdef inline D vdot(DV a, DV b) noexcept nogil:
    return dadd(dadd(dmul(a.x, b.x), dmul(a.y, b.y)), dmul(a.z, b.z))

cdef inline DV vcross(DV a, DV b) noexcept nogil:
    cdef DV r
    r.x = dsub(dmul(a.y, b.z), dmul(a.z, b.y))
    r.y = dsub(dmul(a.z, b.x), dmul(a.x, b.z))
    r.z = dsub(dmul(a.x, b.y), dmul(a.y, b.x))
    return r


# -- intersection ------------------------------------------------------------------

cdef inline bint hit_sphere(const double* q, DV o, DV d, double t_min, D* t_out, DV* n_out) noexcept nogil:
    cdef DV c = vc(q[0], q[1], q[2])
    cdef double r = q[3]
    cdef DV oc = vsub(o, c)
    cdef D b = vdot(oc, d)
    cdef D cc = daddf(vdot(oc, oc), -(r * r))
    cdef D disc = dsub(dmul(b, b), cc)
    if not (disc.v >= 0.0):
        return False
    cdef D sq = dsqrt(disc)
    cdef D t = dsub(dneg(b), sq)
    if not (t.v > t_min):
        t = dadd(dneg(b), sq)
    if not (t.v > t_min):
        return False
    t_out[0] = t
    n_out[0] = vscalef(vsub(vadd(o, vscale(d, t)), c), 1.0 / r)
    return True


cdef inline bint hit_box(const double* q, DV o, DV d, double t_min, D* t_out, DV* n_out) noexcept nogil:
    cdef D comps_o[3]
    cdef D comps_d[3]
    comps_o[0] = o.x
    comps_o[1] = o.y
    comps_o[2] = o.z
    comps_d[0] = d.x
    comps_d[1] = d.y
    comps_d[2] = d.z
    cdef D t_near, t_far, t1, t2, tlo, thi, inv
    cdef int ax_near = 0, ax_far = 0, k
    for k in range(3):
        if comps_d[k].v == 0.0:
            if comps_o[k].v < q[k] or comps_o[k].v > q[3 + k]:
                return False
            tlo = dc(-INFINITY)
            thi = dc(INFINITY)
        else:
            inv = drdivf(1.0, comps_d[k])
            t1 = dmul(drsubf(q[k], comps_o[k]), inv)
            t2 = dmul(drsubf(q[3 + k], comps_o[k]), inv)
            if t1.v > t2.v:
                tlo = t2
                thi = t1
            else:
                tlo = t1
                thi = t2
        if k == 0:
            t_near = tlo
            t_far = thi
        else:
            if tlo.v > t_near.v:
                t_near = tlo
                ax_near = k
            if thi.v < t_far.v:
                t_far = thi
                ax_far = k
    if not (t_near.v <= t_far.v):
        return False
    cdef D t
    cdef int ax
    if t_near.v > t_min:
        t = t_near
        ax = ax_near
    else:
        t = t_far
        ax = ax_far
    if not (t.v > t_min):
        return False
    t_out[0] = t
    n_out[0] = vc(1.0 if ax == 0 else 0.0, 1.0 if ax == 1 else 0.0, 1.0 if ax == 2 else 0.0)
    return True


cdef inline bint hit_triangle(const double* q, DV o, DV d, double t_min, D* t_out, DV* n_out) noexcept nogil:
    cdef DV v0 = vc(q[0], q[1], q[2])
    cdef DV e1 = vc(q[3] - q[0], q[4] - q[1], q[5] - q[2])
    cdef DV e2 = vc(q[6] - q[0], q[7] - q[1], q[8] - q[2])
    cdef DV pv = vcross(d, e2)
    cdef D det = vdot(e1, pv)
    if not (fabs(det.v) >= 1e-15):
        return False
    cdef D inv = drdivf(1.0, det)
    cdef DV tv = vsub(o, v0)
    cdef D u = dmul(vdot(tv, pv), inv)
    cdef DV qv = vcross(tv, e1)
    cdef D v = dmul(vdot(d, qv), inv)
    cdef D t = dmul(vdot(e2, qv), inv)
    if not (u.v >= 0.0 and u.v <= 1.0 and v.v >= 0.0 and u.v + v.v <= 1.0):
        return False
    if not (t.v > t_min):
        return False
    cdef double nx = e1.y.v * e2.z.v - e1.z.v * e2.y.v
    cdef double ny = e1.z.v * e2.x.v - e1.x.v * e2.z.v
    cdef double nz = e1.x.v * e2.y.v - e1.y.v * e2.x.v
    cdef double nn = sqrt(nx * nx + ny * ny + nz * nz)
    t_out[0] = t
    n_out[0] = vc(nx / nn, ny / nn, nz / nn)
    return True


cdef inline bint hit_plane(const double* q, DV o, DV d, double t_min, D* t_out, DV* n_out) noexcept nogil:
    cdef DV p0 = vc(q[0], q[1], q[2])
    cdef DV n = vc(q[3], q[4], q[5])
    cdef D denom = vdot(d, n)
    if denom.v == 0.0:
        return False
    cdef D t = ddiv(vdot(vsub(p0, o), n), denom)
    if not (t.v > t_min):
        return False
    t_out[0] = t
    n_out[0] = n
    return True


cdef inline int nearest(const SceneC* s, DV o, DV d, double t_min, D* t_out, DV* n_out) noexcept nogil:
    """Index of the nearest primitive hit (or -1); fills t and the front-facing normal."""
    cdef int k, best = -1
    cdef double best_t = INFINITY
    cdef D t, bt
    cdef DV n, bn
    cdef bint ok
    cdef int kind
    for k in range(s.nprim):
        kind = <int>s.kind[k]
        if kind == 0:
            ok = hit_sphere(s.data + 9 * k, o, d, t_min, &t, &n)
        elif kind == 1:
            ok = hit_box(s.data + 9 * k, o, d, t_min, &t, &n)
        elif kind == 2:
            ok = hit_triangle(s.data + 9 * k, o, d, t_min, &t, &n)
        else:
            ok = hit_plane(s.data + 9 * k, o, d, t_min, &t, &n)
        if ok and t.v < best_t:
            best_t = t.v
            best = k
            bt = t
            bn = n
    if best >= 0:
        if vdot(bn, d).v > 0.0:
            bn = vscalef(bn, -1.0)
        t_out[0] = bt
        n_out[0] = bn
    return best


cdef inline DV primal(DV a) noexcept nogil:
    return vc(a.x.v, a.y.v, a.z.v)


cdef inline DV to_world(DV n, D lx, D ly, D lz) noexcept nogil:
    cdef double sign = copysign(1.0, n.z.v)
    cdef D a = drdivf(-1.0, daddf(n.z, sign))
    cdef D b = dmul(dmul(n.x, n.y), a)
    cdef DV b1, b2
    b1.x = daddf(dmulf(dmul(dmul(n.x, n.x), a), sign), 1.0)
    b1.y = dmulf(b, sign)
    b1.z = dneg(dmulf(n.x, sign))
    b2.x = b
    b2.y = daddf(dmul(dmul(n.y, n.y), a), sign)
    b2.z = dneg(n.y)
    return vadd(vadd(vscale(b1, lx), vscale(b2, ly)), vscale(n, lz))


cdef void trace(const SceneC* s, DV o, DV d, uint64_t h, uint64_t sample, int start_depth,
                int max_depth, D* out, double* point, uint8_t* hit0) noexcept nogil:
    cdef double beta0 = 1.0, beta1 = 1.0, beta2 = 1.0
    cdef D L0 = dc(0.0), L1 = dc(0.0), L2 = dc(0.0)
    cdef int depth, idx, base, pick, li
    cdef double t_min, e0, e1, e2, a0, a1, a2, radius, r2, u1, phi, rr
    cdef D t, dist2, sin2max, cosmax, one_minus, cos_t, sin2, sin_t, cos_x, solid, contrib
    cdef DV n, p, wc, w, wl
    cdef D st
    cdef DV sn
    cdef const double* q
    cdef int shadow

    for depth in range(start_depth, max_depth + 1):
        t_min = 0.0 if depth == 0 else s.eps
        idx = nearest(s, o, d, t_min, &t, &n)
        if idx < 0:
            L0.v = L0.v + beta0 * s.bg0
            L1.v = L1.v + beta1 * s.bg1
            L2.v = L2.v + beta2 * s.bg2
            break
        p = vadd(o, vscale(d, t))
        if depth == 0 and point != NULL:
            point[0] = p.x.v
            point[1] = p.y.v
            point[2] = p.z.v
            hit0[0] = 1
        if depth == start_depth or not s.nee[idx]:
            L0.v = L0.v + beta0 * s.emission[3 * idx]
            L1.v = L1.v + beta1 * s.emission[3 * idx + 1]
            L2.v = L2.v + beta2 * s.emission[3 * idx + 2]
        if depth == max_depth:
            break
        a0 = s.albedo[3 * idx]
        a1 = s.albedo[3 * idx + 1]
        a2 = s.albedo[3 * idx + 2]
        if not (a0 > 0.0 or a1 > 0.0 or a2 > 0.0):
            break
        base = DIM_BOUNCE0 + DIMS_PER_BOUNCE * depth

        if s.nlights > 0:
            pick = <int>(uni(h, sample, base) * s.nlights)
            if pick > s.nlights - 1:
                pick = s.nlights - 1
            li = <int>s.lights[pick]
            q = s.data + 9 * li
            radius = q[3]
            wc = vsub(vc(q[0], q[1], q[2]), p)
            dist2 = vdot(wc, wc)
            if dist2.v > radius * radius:
                w = vscale(wc, drdivf(1.0, dsqrt(dist2)))
                sin2max = drdivf(radius * radius, dist2)
                cosmax = dsqrt(drsubf(1.0, sin2max))
                one_minus = ddiv(sin2max, daddf(cosmax, 1.0))
                cos_t = drsubf(1.0, dmulf(one_minus, uni(h, sample, base + 1)))
                sin2 = drsubf(1.0, dmul(cos_t, cos_t))
                if sin2.v > 0.0:
                    sin_t = dsqrt(sin2)
                else:
                    sin_t = dc(0.0)
                phi = TWO_PI * uni(h, sample, base + 2)
                wl = to_world(w, dmulf(sin_t, cos(phi)), dmulf(sin_t, sin(phi)), cos_t)
                cos_x = vdot(n, wl)
                if cos_x.v > 0.0:
                    shadow = nearest(s, primal(p), primal(wl), s.eps, &st, &sn)
                    if shadow == li:
                        solid = dmulf(one_minus, TWO_PI)
                        contrib = dmul(cos_x, solid)
                        L0 = dadd(L0, dmulf(contrib, beta0 * a0 * s.emission[3 * li] * (INV_PI * s.nlights)))
                        L1 = dadd(L1, dmulf(contrib, beta1 * a1 * s.emission[3 * li + 1] * (INV_PI * s.nlights)))
                        L2 = dadd(L2, dmulf(contrib, beta2 * a2 * s.emission[3 * li + 2] * (INV_PI * s.nlights)))

        u1 = uni(h, sample, base + 3)
        phi = TWO_PI * uni(h, sample, base + 4)
        rr = sqrt(u1)
        d = to_world(n, dc(rr * cos(phi)), dc(rr * sin(phi)), dc(sqrt(1.0 - u1)))
        o = p
        beta0 = beta0 * a0
        beta1 = beta1 * a1
        beta2 = beta2 * a2

    out[0] = L0
    out[1] = L1
    out[2] = L2


cdef void render_pixel(const SceneC* s, Py_ssize_t pix, int rows, int cols, int spp, int max_depth,
                       uint64_t seed_base, const double* cam, bint want_grad,
                       double* img, double* jac, double* pts, uint8_t* mask) noexcept nogil:
    cdef Py_ssize_t i = pix // cols, j = pix % cols
    cdef uint64_t h = mix64(seed_base ^ <uint64_t>pix)
    cdef double acc[3]
    cdef double gacc[9]
    cdef D out[3]
    cdef int smp, c, k
    cdef double ju, jv, sx, sy, r0, r1, r2, nrm
    cdef DV o, d
    for c in range(3):
        acc[c] = 0.0
    for c in range(9):
        gacc[c] = 0.0
    cdef double tan_half = cam[12], aspect = cam[13]
    for smp in range(spp):
        ju = uni(h, <uint64_t>smp, 0)
        jv = uni(h, <uint64_t>smp, 1)
        sx = ((j + ju) / cols * 2.0 - 1.0) * aspect * tan_half
        sy = (1.0 - (i + jv) / rows * 2.0) * tan_half
        r0 = cam[9] + sx * cam[3] + sy * cam[6]
        r1 = cam[10] + sx * cam[4] + sy * cam[7]
        r2 = cam[11] + sx * cam[5] + sy * cam[8]
        nrm = sqrt(r0 * r0 + r1 * r1 + r2 * r2)
        d = vc(r0 / nrm, r1 / nrm, r2 / nrm)
        o = vc(cam[0], cam[1], cam[2])
        if want_grad:
            o.x.g0 = 1.0
            o.y.g1 = 1.0
            o.z.g2 = 1.0
        if pts != NULL:
            trace(s, o, d, h, <uint64_t>smp, 0, max_depth, out,
                  pts + 3 * (pix * spp + smp), mask + pix * spp + smp)
        else:
            trace(s, o, d, h, <uint64_t>smp, 0, max_depth, out, NULL, NULL)
        for c in range(3):
            acc[c] = acc[c] + out[c].v
            gacc[3 * c] = gacc[3 * c] + out[c].g0
            gacc[3 * c + 1] = gacc[3 * c + 1] + out[c].g1
            gacc[3 * c + 2] = gacc[3 * c + 2] + out[c].g2
    cdef double inv_spp = 1.0 / spp
    for c in range(3):
        img[3 * pix + c] = acc[c] * inv_spp
    if want_grad:
        for k in range(9):
            jac[9 * pix + k] = gacc[k] * inv_spp


def render_kernel(pack, cam, int rows, int cols, int spp, int max_depth, seed,
                  bint want_grad=False, bint want_points=False, int threads=0):
    """Same contract as ``_pykernel.render_kernel``; ``threads=0`` uses the OpenMP default."""
    cdef int64_t[::1] kind = np.ascontiguousarray(pack["kind"], dtype=np.int64)
    cdef double[::1] data = np.ascontiguousarray(pack["data"], dtype=np.float64).ravel()
    cdef double[::1] albedo = np.ascontiguousarray(pack["albedo"], dtype=np.float64).ravel()
    cdef double[::1] emission = np.ascontiguousarray(pack["emission"], dtype=np.float64).ravel()
    cdef int64_t[::1] lights = np.ascontiguousarray(np.append(pack["lights"], -1), dtype=np.int64)
    nee_np = np.zeros(len(pack["kind"]) + 1, dtype=np.uint8)
    nee_np[np.asarray(pack["lights"], dtype=np.int64)] = 1
    cdef uint8_t[::1] nee = nee_np
    cdef double[::1] camv = np.ascontiguousarray(np.concatenate([
        cam["position"], cam["right"], cam["up"], cam["forward"], [cam["tan_half"], cam["aspect"]]
    ]), dtype=np.float64)

    cdef SceneC s
    s.nprim = kind.shape[0]
    s.nlights = lights.shape[0] - 1
    s.kind = &kind[0] if s.nprim > 0 else NULL
    s.data = &data[0] if s.nprim > 0 else NULL
    s.albedo = &albedo[0] if s.nprim > 0 else NULL
    s.emission = &emission[0] if s.nprim > 0 else NULL
    s.lights = &lights[0]
    s.nee = &nee[0]
    s.bg0 = pack["background"][0]
    s.bg1 = pack["background"][1]
    s.bg2 = pack["background"][2]
    s.eps = pack["eps"]

    cdef Py_ssize_t n_pix = <Py_ssize_t>rows * cols
    img_np = np.zeros(n_pix * 3)
    jac_np = np.zeros(n_pix * 9 if want_grad else 1)
    pts_np = np.zeros(n_pix * spp * 3 if want_points else 1)
    mask_np = np.zeros(n_pix * spp if want_points else 1, dtype=np.uint8)
    cdef double[::1] img = img_np
    cdef double[::1] jac = jac_np
    cdef double[::1] pts = pts_np
    cdef uint8_t[::1] mask = mask_np
    cdef double* pts_ptr = &pts[0] if want_points else NULL
    cdef uint8_t* mask_ptr = &mask[0] if want_points else NULL
    cdef uint64_t seed_base = mix64((<uint64_t>int(seed)) ^ GOLDEN)
    cdef Py_ssize_t pix
    cdef int nthreads = threads
    cdef const SceneC* sp = &s

    if nthreads <= 0:
        for pix in prange(n_pix, nogil=True, schedule="dynamic", chunksize=64):
            render_pixel(sp, pix, rows, cols, spp, max_depth, seed_base, &camv[0], want_grad,
                         &img[0], &jac[0], pts_ptr, mask_ptr)
    else:
        for pix in prange(n_pix, nogil=True, schedule="dynamic", chunksize=64, num_threads=nthreads):
            render_pixel(sp, pix, rows, cols, spp, max_depth, seed_base, &camv[0], want_grad,
                         &img[0], &jac[0], pts_ptr, mask_ptr)

    image = img_np.reshape(rows, cols, 3)
    jacobian = jac_np.reshape(rows, cols, 3, 3) if want_grad else None
    points = pts_np.reshape(-1, 3) if want_points else None
    hits = mask_np.astype(bool) if want_points else None
    return image, jacobian, points, hits


# -- clustering ------------------------------------------------------------------

cdef inline int64_t find_root(int64_t* parent, int64_t i) noexcept nogil:
    cdef int64_t root = i
    cdef int64_t nxt
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


cdef inline bint cells_close(const double* pts, int64_t a0, int64_t a1, int64_t b0, int64_t b1,
                             double r2) noexcept nogil:
    cdef int64_t i, j
    cdef double dx, dy, dz
    for i in range(a0, a1):
        for j in range(b0, b1):
            dx = pts[3 * i] - pts[3 * j]
            dy = pts[3 * i + 1] - pts[3 * j + 1]
            dz = pts[3 * i + 2] - pts[3 * j + 2]
            if dx * dx + dy * dy + dz * dz <= r2:
                return True
    return False


def union_cells(const double[:, ::1] pts, const int64_t[::1] start, const int64_t[::1] end,
                const int64_t[::1] pair_a, const int64_t[::1] pair_b, double r2, int64_t[::1] parent):
    """Join neighbouring cells that hold a point pair within sqrt(r2); see _cluster.py."""
    cdef Py_ssize_t k, n = pair_a.shape[0]
    cdef int64_t a, b, ra, rb
    cdef const double* p = &pts[0, 0] if pts.shape[0] > 0 else NULL
    with nogil:
        for k in range(n):
            a = pair_a[k]
            b = pair_b[k]
            ra = find_root(&parent[0], a)
            rb = find_root(&parent[0], b)
            if ra == rb:
                continue
            if cells_close(p, start[a], end[a], start[b], end[b], r2):
                if ra < rb:
                    parent[rb] = ra
                else:
                    parent[ra] = rb
