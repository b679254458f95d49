"""Backend selection for the surface-distance kernels.

Prefers the compiled extension and falls back to the numpy implementation
when it is not built.  ``KGPL_SURFACE_BACKEND=numpy`` forces the fallback
(useful for the backend-agreement tests and the benchmark).
"""

from __future__ import annotations

import os

import numpy as np

from . import _surface_np

if os.environ.get("KGPL_SURFACE_BACKEND", "").lower() == "numpy":
    _backend = _surface_np
    BACKEND = "numpy"
else:
    try:
        from . import _surface_cy as _backend  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _backend = _surface_np
        BACKEND = "numpy"


def backend_name() -> str:
    return BACKEND


def get_backend(name: str | None = None):
    """Return the module implementing the kernel contract."""
    if name in (None, BACKEND):
        return _backend
    if name == "numpy":
        return _surface_np
    if name == "compiled":
        try:
            from . import _surface_cy
            return _surface_cy
        except ImportError as exc:
            raise ImportError("compiled surface backend is not built") from exc
    raise ValueError(f"unknown surface backend {name!r}")


def boundary_mask(mask: np.ndarray, backend=None) -> np.ndarray:
    return get_backend(backend).boundary_mask(mask)


def boundary_points(mask: np.ndarray, spacing=(1.0, 1.0, 1.0), backend=None) -> np.ndarray:
    """Physical coordinates (mm) of the boundary voxel centers."""
    b = get_backend(backend).boundary_mask(mask)
    pts = np.argwhere(b).astype(np.float64)
    return pts * np.asarray(spacing, dtype=np.float64)


def directed_mean_distance(points_a, points_b, backend=None) -> float:
    return float(get_backend(backend).directed_mean_distance(points_a, points_b))
