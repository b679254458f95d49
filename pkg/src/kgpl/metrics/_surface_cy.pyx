# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled surface-distance kernels (hot path of the ASD metric).

Mirrors the numpy fallback in ``_surface_np``: 6-connectivity boundaries,
voxel-center point sets, brute-force nearest distances.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def boundary_mask(mask):
    """Voxels of ``mask`` 6-adjacent to a non-mask voxel (array edge counts)."""
    cdef cnp.uint8_t[:, :, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t nx = m.shape[0], ny = m.shape[1], nz = m.shape[2]
    out_arr = np.zeros((nx, ny, nz), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef bint edge
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not m[i, j, k]:
                    continue
                edge = (
                    i == 0 or not m[i - 1, j, k] or
                    i == nx - 1 or not m[i + 1, j, k] or
                    j == 0 or not m[i, j - 1, k] or
                    j == ny - 1 or not m[i, j + 1, k] or
                    k == 0 or not m[i, j, k - 1] or
                    k == nz - 1 or not m[i, j, k + 1]
                )
                if edge:
                    out[i, j, k] = 1
    return out_arr


def directed_mean_distance(points_a, points_b):
    """Mean over points of A of the Euclidean distance to the nearest point of B."""
    cdef cnp.float64_t[:, ::1] a = np.ascontiguousarray(points_a, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] b = np.ascontiguousarray(points_b, dtype=np.float64)
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    if na == 0 or nb == 0:
        raise ValueError("point sets must be non-empty")
    cdef double total = 0.0, best, dx, dy, dz, d2
    cdef Py_ssize_t i, j
    for i in range(na):
        best = -1.0
        for j in range(nb):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if best < 0.0 or d2 < best:
                best = d2
        total += sqrt(best)
    return total / na
