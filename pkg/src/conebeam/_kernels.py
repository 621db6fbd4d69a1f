"""Numba kernels for the Joseph projector pair and the FDK backprojector.

Volumes are flat float64 arrays indexed ``x + nx*(y + ny*z)``; sinograms are
``(num_views, nv, nu)`` float64 arrays. All accumulation is in float64.
"""
import math
import warnings

import numpy as np

warnings.filterwarnings("ignore", message="The TBB threading layer")
from numba import njit, prange  # noqa: E402


# Zero border added around the volume so the interpolation loops need no
# bounds checks: transverse coordinates stay within [-2, n + 1] because the
# plane range below is widened by at most one plane and |slope| <= 1.
PAD = 3


@njit(cache=True, inline="always", fastmath=True)
def _ray_setup(src, det, eu, view, iu, iv, nu, nv, du, dv, nx, ny, nz, vs):
    """Plane-stepping parameters for one source-to-pixel ray.

    Returned strides index the padded volume ``(nz + 2P, ny + 2P, nx + 2P)``;
    ``k`` runs over unpadded dominant-axis plane indices.
    """
    u = (iu - (nu - 1) * 0.5) * du
    v = (iv - (nv - 1) * 0.5) * dv
    px = det[view, 0] + u * eu[view, 0]
    py = det[view, 1] + u * eu[view, 1]
    pz = v
    sx, sy, sz = src[view, 0], src[view, 1], src[view, 2]
    rx, ry, rz = px - sx, py - sy, pz - sz
    length = math.sqrt(rx * rx + ry * ry + rz * rz)
    # voxel index coordinates: ix = x / vs + (nx - 1) / 2
    sx = sx / vs + (nx - 1) * 0.5
    sy = sy / vs + (ny - 1) * 0.5
    sz = sz / vs + (nz - 1) * 0.5
    rx, ry, rz = rx / vs, ry / vs, rz / vs
    ax, ay, az = abs(rx), abs(ry), abs(rz)
    px_, py_ = nx + 2 * PAD, ny + 2 * PAD
    # dominant axis, ties broken x, then y, then z
    if ax >= ay and ax >= az:
        sd, rd, nd, std = sx, rx, nx, 1
        s1, r1, n1, st1 = sy, ry, ny, px_
        s2, r2, n2, st2 = sz, rz, nz, px_ * py_
    elif ay >= az:
        sd, rd, nd, std = sy, ry, ny, px_
        s1, r1, n1, st1 = sx, rx, nx, 1
        s2, r2, n2, st2 = sz, rz, nz, px_ * py_
    else:
        sd, rd, nd, std = sz, rz, nz, px_ * py_
        s1, r1, n1, st1 = sx, rx, nx, 1
        s2, r2, n2, st2 = sy, ry, ny, px_
    m1 = r1 / rd
    m2 = r2 / rd
    # planes crossed by the source-to-pixel segment
    lo = min(sd, sd + rd)
    hi = max(sd, sd + rd)
    k0 = max(0, int(math.ceil(lo)))
    k1 = min(nd - 1, int(math.floor(hi)))
    # planes where each transverse coordinate lies in [-1, n]; outside that
    # band every interpolation weight falls on the zero border
    if m1 != 0.0:
        ka = sd + (-1.0 - s1) / m1
        kb = sd + (n1 - s1) / m1
        k0 = max(k0, int(math.floor(min(ka, kb))))
        k1 = min(k1, int(math.ceil(max(ka, kb))))
    elif not (-1.0 < s1 < n1):
        k1 = -1
    if m2 != 0.0:
        ka = sd + (-1.0 - s2) / m2
        kb = sd + (n2 - s2) / m2
        k0 = max(k0, int(math.floor(min(ka, kb))))
        k1 = min(k1, int(math.ceil(max(ka, kb))))
    elif not (-1.0 < s2 < n2):
        k1 = -1
    # shift to padded index space
    base0 = PAD * (1 + px_ + px_ * py_)
    step = length / abs(rd)  # = voxel_size / abs(dominant direction cosine)
    return sd, s1, m1, st1, s2, m2, st2, std, base0, k0, k1, step


@njit(cache=True, parallel=True, fastmath=True)
def joseph_forward(vol, nx, ny, nz, vs, src, det, eu, nu, nv, du, dv, out):
    """Ray sums of the zero-padded flat volume ``vol`` into ``out``."""
    n_views = out.shape[0]
    for view in prange(n_views):
        for iv in range(nv):
            for iu in range(nu):
                (sd, s1, m1, st1, s2, m2, st2, std, base0, k0, k1, step) = _ray_setup(
                    src, det, eu, view, iu, iv, nu, nv, du, dv, nx, ny, nz, vs
                )
                acc = 0.0
                for k in range(k0, k1 + 1):
                    a1 = s1 + (k - sd) * m1
                    a2 = s2 + (k - sd) * m2
                    fl1 = math.floor(a1)
                    fl2 = math.floor(a2)
                    f1 = a1 - fl1
                    f2 = a2 - fl2
                    idx = base0 + k * std + int(fl1) * st1 + int(fl2) * st2
                    acc += (1.0 - f2) * ((1.0 - f1) * vol[idx] + f1 * vol[idx + st1]) + f2 * (
                        (1.0 - f1) * vol[idx + st2] + f1 * vol[idx + st2 + st1]
                    )
                out[view, iv, iu] = acc * step
    return out


@njit(cache=True, fastmath=True)
def _backproject_views(sino, v_start, v_stop, nx, ny, nz, vs, src, det, eu, nu, nv, du, dv, acc):
    for view in range(v_start, v_stop):
        for iv in range(nv):
            for iu in range(nu):
                value = sino[view, iv, iu]
                if value == 0.0:
                    continue
                (sd, s1, m1, st1, s2, m2, st2, std, base0, k0, k1, step) = _ray_setup(
                    src, det, eu, view, iu, iv, nu, nv, du, dv, nx, ny, nz, vs
                )
                w = value * step
                for k in range(k0, k1 + 1):
                    a1 = s1 + (k - sd) * m1
                    a2 = s2 + (k - sd) * m2
                    fl1 = math.floor(a1)
                    fl2 = math.floor(a2)
                    f1 = a1 - fl1
                    f2 = a2 - fl2
                    idx = base0 + k * std + int(fl1) * st1 + int(fl2) * st2
                    w0 = (1.0 - f2) * w
                    w1 = f2 * w
                    acc[idx] += (1.0 - f1) * w0
                    acc[idx + st1] += f1 * w0
                    acc[idx + st2] += (1.0 - f1) * w1
                    acc[idx + st2 + st1] += f1 * w1


@njit(cache=True, parallel=True, fastmath=True)
def joseph_backward(sino, nx, ny, nz, vs, src, det, eu, nu, nv, du, dv, n_chunks, out):
    """Scatter each ray's value back along its Joseph weights.

    ``out`` is the flat zero-padded volume. Views are split into ``n_chunks``
    contiguous blocks with private accumulators that are summed in block
    order, so the result depends only on ``n_chunks``.
    """
    n_views = sino.shape[0]
    n_vox = out.shape[0]
    partial = np.zeros((n_chunks, n_vox))
    for c in prange(n_chunks):
        v_start = (c * n_views) // n_chunks
        v_stop = ((c + 1) * n_views) // n_chunks
        _backproject_views(sino, v_start, v_stop, nx, ny, nz, vs, src, det, eu,
                           nu, nv, du, dv, partial[c])
    for i in range(n_vox):
        out[i] = partial[0, i]
    for c in range(1, n_chunks):
        for i in range(n_vox):
            out[i] += partial[c, i]
    return out


@njit(cache=True, parallel=True, fastmath=True)
def fdk_backproject(filtered, cos_t, sin_t, weight_scale, nx, ny, nz, vs,
                    sod, sdd, nu, nv, du, dv, out):
    """Voxel-driven distance-weighted backprojection of filtered projections.

    ``out[z, y, x] = weight_scale * sum_views sod**2 / U**2 * interp(filtered)``,
    with ``U`` the voxel's depth along the central ray measured from the source.
    """
    n_views = filtered.shape[0]
    cu = (nu - 1) * 0.5
    cv = (nv - 1) * 0.5
    for iz in prange(nz):
        pz = (iz - (nz - 1) * 0.5) * vs
        for view in range(n_views):
            c = cos_t[view]
            s = sin_t[view]
            for iy in range(ny):
                py = (iy - (ny - 1) * 0.5) * vs
                for ix in range(nx):
                    px = (ix - (nx - 1) * 0.5) * vs
                    depth = sod - (px * c + py * s)
                    if depth <= 0.0:
                        continue
                    mag = sdd / depth
                    fu = (-px * s + py * c) * mag / du + cu
                    fv = pz * mag / dv + cv
                    iu = int(math.floor(fu))
                    iv = int(math.floor(fv))
                    wu = fu - iu
                    wv = fv - iv
                    val = 0.0
                    if 0 <= iv < nv:
                        if 0 <= iu < nu:
                            val += (1.0 - wu) * (1.0 - wv) * filtered[view, iv, iu]
                        if 0 <= iu + 1 < nu:
                            val += wu * (1.0 - wv) * filtered[view, iv, iu + 1]
                    if 0 <= iv + 1 < nv:
                        if 0 <= iu < nu:
                            val += (1.0 - wu) * wv * filtered[view, iv + 1, iu]
                        if 0 <= iu + 1 < nu:
                            val += wu * wv * filtered[view, iv + 1, iu + 1]
                    ratio = sod / depth
                    out[iz, iy, ix] += weight_scale * ratio * ratio * val
    return out


@njit(cache=True, parallel=True)
def chambolle_tv(f, weight, n_iter, tau, volumetric, out):
    """Chambolle ROF iterations on a ``(nz, ny, nx)`` float64 array.

    Same discretisation as the NumPy route in ``enhance.tv_denoise``; with
    ``volumetric`` false the z differences are dropped and every slice is
    denoised independently.
    """
    nz, ny, nx = f.shape
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    pz = np.zeros_like(f)
    d = np.empty_like(f)
    for _ in range(n_iter):
        _tv_div(px, py, pz, volumetric, d)
        for z in prange(nz):
            for y in range(ny):
                for x in range(nx):
                    d[z, y, x] -= f[z, y, x] / weight
        for z in prange(nz):
            for y in range(ny):
                for x in range(nx):
                    c = d[z, y, x]
                    gx = d[z, y, x + 1] - c if x + 1 < nx else 0.0
                    gy = d[z, y + 1, x] - c if y + 1 < ny else 0.0
                    gz = 0.0
                    if volumetric and z + 1 < nz:
                        gz = d[z + 1, y, x] - c
                    den = 1.0 + tau * math.sqrt(gx * gx + gy * gy + gz * gz)
                    px[z, y, x] = (px[z, y, x] + tau * gx) / den
                    py[z, y, x] = (py[z, y, x] + tau * gy) / den
                    pz[z, y, x] = (pz[z, y, x] + tau * gz) / den
    _tv_div(px, py, pz, volumetric, d)
    for z in prange(nz):
        for y in range(ny):
            for x in range(nx):
                out[z, y, x] = f[z, y, x] - weight * d[z, y, x]


@njit(cache=True, parallel=True)
def _tv_div(px, py, pz, volumetric, out):
    nz, ny, nx = px.shape
    for z in prange(nz):
        for y in range(ny):
            for x in range(nx):
                s = px[z, y, x] + py[z, y, x]
                if x > 0:
                    s -= px[z, y, x - 1]
                if y > 0:
                    s -= py[z, y - 1, x]
                if volumetric:
                    s += pz[z, y, x]
                    if z > 0:
                        s -= pz[z - 1, y, x]
                out[z, y, x] = s
