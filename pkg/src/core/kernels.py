"""
Kernels - Compiled point/triangle distance and winding-number loops.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _point_triangle_sqdist(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az
    apx = px - ax
    apy = py - ay
    apz = pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz

    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        qx = apx - v * abx
        qy = apy - v * aby
        qz = apz - v * abz
        return qx * qx + qy * qy + qz * qz

    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx = apx - w * acx
        qy = apy - w * acy
        qz = apz - w * acz
        return qx * qx + qy * qy + qz * qz

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = bpx - w * (cx - bx)
        qy = bpy - w * (cy - by)
        qz = bpz - w * (cz - bz)
        return qx * qx + qy * qy + qz * qz

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    qx = apx - abx * v - acx * w
    qy = apy - aby * v - acy * w
    qz = apz - abz * v - acz * w
    return qx * qx + qy * qy + qz * qz


@njit(cache=True)
def _solid_angle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Signed solid angle of a triangle seen from p (positive for outward faces around p)."""
    ax -= px
    ay -= py
    az -= pz
    bx -= px
    by -= py
    bz -= pz
    cx -= px
    cy -= py
    cz -= pz
    la = math.sqrt(ax * ax + ay * ay + az * az)
    lb = math.sqrt(bx * bx + by * by + bz * bz)
    lc = math.sqrt(cx * cx + cy * cy + cz * cz)
    det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
    div = (la * lb * lc
           + (ax * bx + ay * by + az * bz) * lc
           + (ax * cx + ay * cy + az * cz) * lb
           + (bx * cx + by * cy + bz * cz) * la)
    return 2.0 * math.atan2(det, div)


@njit(cache=True, parallel=True)
def signed_distance(points, triangles):
    """Exact distance to the triangle soup, negative where the winding number exceeds 1/2.

    points: (P, 3); triangles: (F, 3, 3) with outward orientation.
    """
    n = points.shape[0]
    nf = triangles.shape[0]
    out = np.empty(n)
    for i in prange(n):
        px = points[i, 0]
        py = points[i, 1]
        pz = points[i, 2]
        best = np.inf
        omega = 0.0
        for f in range(nf):
            t = triangles[f]
            d2 = _point_triangle_sqdist(px, py, pz,
                                        t[0, 0], t[0, 1], t[0, 2],
                                        t[1, 0], t[1, 1], t[1, 2],
                                        t[2, 0], t[2, 1], t[2, 2])
            if d2 < best:
                best = d2
            omega += _solid_angle(px, py, pz,
                                  t[0, 0], t[0, 1], t[0, 2],
                                  t[1, 0], t[1, 1], t[1, 2],
                                  t[2, 0], t[2, 1], t[2, 2])
        dist = math.sqrt(best)
        if omega / (4.0 * math.pi) > 0.5:
            out[i] = -dist
        else:
            out[i] = dist
    return out


@njit(cache=True, parallel=True)
def unsigned_distance(points, triangles):
    n = points.shape[0]
    nf = triangles.shape[0]
    out = np.empty(n)
    for i in prange(n):
        best = np.inf
        for f in range(nf):
            t = triangles[f]
            d2 = _point_triangle_sqdist(points[i, 0], points[i, 1], points[i, 2],
                                        t[0, 0], t[0, 1], t[0, 2],
                                        t[1, 0], t[1, 1], t[1, 2],
                                        t[2, 0], t[2, 1], t[2, 2])
            if d2 < best:
                best = d2
        out[i] = math.sqrt(best)
    return out


@njit(cache=True, parallel=True)
def face_solid_angles(center, triangles):
    """Per-face signed solid angle seen from a single point."""
    nf = triangles.shape[0]
    out = np.empty(nf)
    for f in prange(nf):
        t = triangles[f]
        out[f] = _solid_angle(center[0], center[1], center[2],
                              t[0, 0], t[0, 1], t[0, 2],
                              t[1, 0], t[1, 1], t[1, 2],
                              t[2, 0], t[2, 1], t[2, 2])
    return out
