"""Pure-numpy surface-distance kernels (fallback backend).

Same contract as the compiled backend in ``_surface_cy``: 6-connectivity
boundaries, voxel-center point sets, brute-force nearest distances.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 512


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` 6-adjacent to a non-mask voxel (array edge counts)."""
    m = np.ascontiguousarray(mask, dtype=bool)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = np.ones_like(m)
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    return (m & ~interior).astype(np.uint8)


def directed_mean_distance(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """Mean over points of A of the Euclidean distance to the nearest point of B."""
    a = np.ascontiguousarray(points_a, dtype=np.float64)
    b = np.ascontiguousarray(points_b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("point sets must be non-empty")
    total = 0.0
    for start in range(0, a.shape[0], _CHUNK):
        chunk = a[start:start + _CHUNK]
        d2 = ((chunk[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        total += np.sqrt(d2.min(axis=1)).sum()
    return total / a.shape[0]
