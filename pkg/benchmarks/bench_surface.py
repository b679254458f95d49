"""Timing comparison of the surface-distance kernel backends.

Runs boundary extraction and directed mean distance on spherical shells
of growing size with both the compiled extension and the numpy fallback,
then prints per-kernel timings and speedups.

    python3 benchmarks/bench_surface.py [--sizes 32 64 96] [--repeats 5]
"""

import argparse
import time

import numpy as np

from kgpl.metrics.surface import backend_name, boundary_points, get_backend


def make_masks(size: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    grid = np.indices((size, size, size)).astype(np.float64)
    center = (size - 1) / 2.0
    r = np.sqrt(((grid - center) ** 2).sum(axis=0))
    pred = r < 0.38 * size
    jitter = rng.normal(0.0, 0.01 * size)
    gt = r < 0.38 * size + 1.5 + jitter
    return pred, gt


def time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        get_backend("compiled")
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 96])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    names = available_backends()
    print(f"active backend: {backend_name()}; comparing: {', '.join(names)}\n")
    header = f"{'kernel':<24}{'size':>6}" + "".join(f"{n:>14}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for size in args.sizes:
        pred, gt = make_masks(size)
        rows = {}
        for name in names:
            backend = get_backend(name)
            rows.setdefault("boundary_mask", {})[name] = time_call(
                lambda: backend.boundary_mask(pred), args.repeats)
            pts_a = boundary_points(pred, backend=name)
            pts_b = boundary_points(gt, backend=name)
            rows.setdefault("directed_mean_distance", {})[name] = time_call(
                lambda: backend.directed_mean_distance(pts_a, pts_b), args.repeats)
        for kernel, timings in rows.items():
            line = f"{kernel:<24}{size:>6}"
            for name in names:
                line += f"{timings[name] * 1e3:>12.2f}ms"
            if len(names) == 2:
                line += f"{timings['numpy'] / timings['compiled']:>9.1f}x"
            print(line)

    # The backends must agree before their timings mean anything.
    pred, gt = make_masks(48)
    values = []
    for name in names:
        pts_a = boundary_points(pred, backend=name)
        pts_b = boundary_points(gt, backend=name)
        values.append(get_backend(name).directed_mean_distance(pts_a, pts_b))
    if len(values) == 2 and abs(values[0] - values[1]) > 1e-9:
        raise SystemExit(f"backend disagreement: {values}")
    print(f"\nagreement check: directed distance {values[0]:.6f} mm across backends")


if __name__ == "__main__":
    main()
