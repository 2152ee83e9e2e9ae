"""Pure numpy implementations of the geometry kernels.

Operation order mirrors ``_fast.pyx`` so both backends agree to the last bit
on IEEE doubles (the extension is compiled with ``-ffp-contract=off``).
"""
import math

import numpy as np


def cast_rays(origin, dirs, v0, v1, v2):
    """Nearest watertight ray/triangle hit distance per ray; ``inf`` on a miss.

    ``origin`` is shared by all rays; ``dirs`` is (R, 3).  With unit
    directions the returned value is the Euclidean distance along the ray.
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    nrays = dirs.shape[0]
    depth = np.full(nrays, np.inf)
    if nrays == 0 or len(v0) == 0:
        return depth

    rows = np.arange(nrays)
    kz = np.argmax(np.abs(dirs), axis=1)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    flip = dirs[rows, kz] < 0.0
    kx, ky = np.where(flip, ky, kx), np.where(flip, kx, ky)
    dz = dirs[rows, kz]
    sx = dirs[rows, kx] / dz
    sy = dirs[rows, ky] / dz
    sz = 1.0 / dz

    for a, b, c in zip(np.asarray(v0, np.float64), np.asarray(v1, np.float64), np.asarray(v2, np.float64)):
        a = a - origin
        b = b - origin
        c = c - origin
        az, bz, cz = a[kz], b[kz], c[kz]
        ax = a[kx] - sx * az
        ay = a[ky] - sy * az
        bx = b[kx] - sx * bz
        by = b[ky] - sy * bz
        cx = c[kx] - sx * cz
        cy = c[ky] - sy * cz
        u = cx * by - cy * bx
        v = ax * cy - ay * cx
        w = bx * ay - by * ax
        inside = ~(((u < 0) | (v < 0) | (w < 0)) & ((u > 0) | (v > 0) | (w > 0)))
        det = u + v + w
        inside &= det != 0.0
        t_num = u * (sz * az) + v * (sz * bz) + w * (sz * cz)
        inside &= np.where(det > 0.0, t_num > 0.0, t_num < 0.0)
        if not inside.any():
            continue
        idx = np.nonzero(inside)[0]
        t = t_num[idx] / det[idx]
        closer = t < depth[idx]
        depth[idx[closer]] = t[closer]
    return depth


def cell_index(coord, n):
    """Voxel index for coordinates in [-0.5, 0.5]; -1 marks out-of-cube points."""
    coord = np.asarray(coord, dtype=np.float64)
    idx = np.floor((coord + 0.5) * n).astype(np.int64)
    # c + 0.5 may round up to 1.0 for c just below 0.5
    idx = np.minimum(idx, n - 1)
    outside = (coord < -0.5) | (coord > 0.5)
    return np.where(outside, -1, idx)


def mark_points(points, n, out=None):
    if out is None:
        out = np.zeros((n, n, n), dtype=np.uint8)
    if len(points) == 0:
        return out
    ijk = cell_index(points, n)
    keep = (ijk >= 0).all(axis=1)
    ijk = ijk[keep]
    out[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = 1
    return out


def _norm(e):
    return math.sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])


def sample_triangles(v0, v1, v2, n, pitch):
    """Mark every voxel of an n^3 grid hit by a barycentric lattice on each triangle.

    Each triangle is split into ``k = ceil(longest_edge / pitch)`` steps per
    edge; lattice point (i, j) is ``v0 + (i/k)(v1 - v0) + (j/k)(v2 - v0)``.
    """
    out = np.zeros((n, n, n), dtype=np.uint8)
    for a, b, c in zip(np.asarray(v0, np.float64), np.asarray(v1, np.float64), np.asarray(v2, np.float64)):
        e1 = b - a
        e2 = c - a
        e3 = c - b
        longest = max(_norm(e1), _norm(e2), _norm(e3))
        k = max(1, math.ceil(longest / pitch))
        i, j = np.triu_indices(k + 1)
        # triu gives j >= i; remap to all (i, j) with i + j <= k
        j = j - i
        fi = i / k
        fj = j / k
        pts = a + fi[:, None] * e1 + fj[:, None] * e2
        mark_points(pts, n, out)
    return out
