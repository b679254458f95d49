"""Evaluation metrics: Dice similarity and average surface distance."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import LabelMap
from ..errors import EmptyMask, ShapeMismatch
from .surface import backend_name, boundary_points, directed_mean_distance

__all__ = ["dsc", "asd", "dsc_masks", "asd_masks", "report", "SegReport",
           "ClassMetrics", "backend_name"]


def _check_pair(pred: LabelMap, gt: LabelMap) -> None:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if pred.spacing != gt.spacing:
        raise ShapeMismatch(f"prediction spacing {pred.spacing} != ground truth {gt.spacing}")


def dsc_masks(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """Dice similarity of two boolean masks; 1.0 when both are empty."""
    p = np.asarray(pred_mask, dtype=bool)
    g = np.asarray(gt_mask, dtype=bool)
    if p.shape != g.shape:
        raise ShapeMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def asd_masks(pred_mask: np.ndarray, gt_mask: np.ndarray,
              spacing: Sequence[float] = (1.0, 1.0, 1.0),
              backend: Optional[str] = None) -> float:
    """Symmetric average surface distance of two boolean masks, in mm."""
    p = np.asarray(pred_mask, dtype=bool)
    g = np.asarray(gt_mask, dtype=bool)
    if p.shape != g.shape:
        raise ShapeMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
    if not p.any() or not g.any():
        raise EmptyMask(f"{'prediction' if not p.any() else 'ground truth'} mask is empty")
    spacing = tuple(spacing)
    pb = boundary_points(p, spacing, backend=backend)
    gb = boundary_points(g, spacing, backend=backend)
    d_pg = directed_mean_distance(pb, gb, backend=backend)
    d_gp = directed_mean_distance(gb, pb, backend=backend)
    return 0.5 * (d_pg + d_gp)


def dsc(pred: LabelMap, gt: LabelMap, class_id: int) -> float:
    """Dice similarity 2|P.G| / (|P| + |G|); 1.0 when both masks are empty."""
    _check_pair(pred, gt)
    return dsc_masks(pred.class_mask(class_id), gt.class_mask(class_id))


def asd(pred: LabelMap, gt: LabelMap, class_id: int,
        spacing: Optional[Sequence[float]] = None, backend: Optional[str] = None) -> float:
    """Symmetric average surface distance in millimeters.

    Boundary voxels are mask voxels 6-adjacent to a non-mask voxel; the
    result averages both directions' mean nearest-boundary distances.
    """
    _check_pair(pred, gt)
    spacing = tuple(spacing) if spacing is not None else gt.spacing
    p = pred.class_mask(class_id)
    g = gt.class_mask(class_id)
    if not p.any() or not g.any():
        raise EmptyMask(f"class {class_id} is empty in "
                        f"{'prediction' if not p.any() else 'ground truth'}")
    return asd_masks(p, g, spacing, backend=backend)


@dataclass(frozen=True)
class ClassMetrics:
    class_id: int
    name: str
    dsc: float
    asd: Optional[float]
    empty_mask: bool = False


@dataclass(frozen=True)
class SegReport:
    rows: tuple[ClassMetrics, ...]
    mean_dsc: float
    mean_asd: Optional[float]

    def to_dict(self) -> dict:
        return {
            "classes": [
                {"class_id": r.class_id, "name": r.name, "dsc": r.dsc,
                 "asd": r.asd, "empty_mask": r.empty_mask}
                for r in self.rows
            ],
            "mean_dsc": self.mean_dsc,
            "mean_asd": self.mean_asd,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["class_id", "name", "dsc", "asd", "empty_mask"])
        for r in self.rows:
            writer.writerow([r.class_id, r.name, repr(r.dsc),
                             "" if r.asd is None else repr(r.asd), int(r.empty_mask)])
        writer.writerow(["", "Average", repr(self.mean_dsc),
                         "" if self.mean_asd is None else repr(self.mean_asd), ""])
        return buf.getvalue()


def report(pred: LabelMap, gt: LabelMap,
           class_names: Optional[dict[int, str]] = None,
           include_background: bool = False) -> SegReport:
    """Per-class DSC/ASD table over the classes present in the ground truth.

    Classes whose prediction mask is empty are flagged and excluded from
    the means (their DSC is still listed).
    """
    _check_pair(pred, gt)
    class_names = class_names or {}
    classes = [c for c in gt.present_classes() if include_background or c != 0]
    rows = []
    for c in classes:
        name = class_names.get(c, f"class_{c}")
        d = dsc(pred, gt, c)
        try:
            a = asd(pred, gt, c)
            rows.append(ClassMetrics(c, name, d, a, empty_mask=False))
        except EmptyMask:
            rows.append(ClassMetrics(c, name, d, None, empty_mask=True))
    usable = [r for r in rows if not r.empty_mask]
    mean_dsc = float(np.mean([r.dsc for r in usable])) if usable else 0.0
    mean_asd = float(np.mean([r.asd for r in usable])) if usable else None
    return SegReport(rows=tuple(rows), mean_dsc=mean_dsc, mean_asd=mean_asd)
