"""Domain types shared by every other module.

Volumes and label maps are immutable after construction (their arrays are
marked read-only) so they can be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidLabel, NonFinite, OutOfRange, ShapeMismatch

Vec3 = tuple[float, float, float]

MAX_AGE_YEARS = 130


class Sex(str, Enum):
    MALE = "male"
    FEMALE = "female"
    UNSPECIFIED = "unspecified"


def _frozen_array(data: np.ndarray, dtype=None) -> np.ndarray:
    out = np.array(data, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _check_geometry(shape: tuple[int, ...], spacing: Vec3) -> None:
    if len(shape) != 3 or any(s < 1 for s in shape):
        raise ShapeMismatch(f"expected a 3D grid with all dims >= 1, got shape {shape}")
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ShapeMismatch(f"spacing components must be > 0, got {spacing}")


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar intensity grid with voxel spacing (mm) and origin (mm)."""

    data: np.ndarray
    spacing: Vec3 = (1.0, 1.0, 1.0)
    origin: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dtype = self.data.dtype if np.issubdtype(np.asarray(self.data).dtype, np.floating) else np.float32
        arr = _frozen_array(self.data, dtype=dtype)
        _check_geometry(arr.shape, self.spacing)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())


def label_dtype(num_classes: int) -> np.dtype:
    """Smallest unsigned integer dtype able to hold class indices 0..num_classes-1."""
    return np.min_scalar_type(max(num_classes - 1, 1))


@dataclass(frozen=True, eq=False)
class LabelMap:
    """A 3D grid of integer class indices sharing a Volume's geometry.

    Values >= num_classes are representable (so that validation can flag
    them); negative values are rejected outright because the storage dtype
    is unsigned.
    """

    data: np.ndarray
    num_classes: int
    spacing: Vec3 = (1.0, 1.0, 1.0)
    origin: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if not np.issubdtype(raw.dtype, np.integer):
            raise InvalidLabel(f"label data must be integer, got dtype {raw.dtype}")
        if self.num_classes < 1:
            raise InvalidLabel(f"num_classes must be >= 1, got {self.num_classes}")
        if raw.size and raw.min() < 0:
            raise InvalidLabel("label values must be non-negative")
        dtype = label_dtype(self.num_classes)
        if raw.size and raw.max() > np.iinfo(dtype).max:
            dtype = np.min_scalar_type(int(raw.max()))
        arr = _frozen_array(raw, dtype=dtype)
        _check_geometry(arr.shape, self.spacing)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def class_mask(self, class_id: int) -> np.ndarray:
        return self.data == class_id

    def present_classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.data))


@dataclass(frozen=True)
class SubjectAttributes:
    """Age, sex and diagnosis metadata driving the knowledge-prompt text."""

    age_years: int
    sex: Sex = Sex.UNSPECIFIED
    diagnosis: Optional[str] = None

    def __post_init__(self):
        if not (0 <= self.age_years <= MAX_AGE_YEARS):
            raise OutOfRange(f"age_years must be in [0, {MAX_AGE_YEARS}], got {self.age_years}")
        object.__setattr__(self, "sex", Sex(self.sex))


@dataclass(frozen=True)
class TensorShape3:
    """A named (batch, channels-or-tokens, sequence-or-hidden) triple."""

    batch: int
    channels: int
    length: int

    def __post_init__(self):
        if min(self.batch, self.channels, self.length) < 1:
            raise ShapeMismatch(f"all shape components must be >= 1, got {self}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.batch, self.channels, self.length)


def validate_pair(volume: Volume, labels: LabelMap) -> None:
    """Check that a volume and a label map form a consistent training pair."""
    if volume.shape != labels.shape:
        raise ShapeMismatch(f"volume shape {volume.shape} != label shape {labels.shape}")
    if volume.spacing != labels.spacing:
        raise ShapeMismatch(f"volume spacing {volume.spacing} != label spacing {labels.spacing}")
    if not volume.is_finite():
        raise NonFinite("volume contains NaN or Inf intensities")
    if labels.data.size and int(labels.data.max()) >= labels.num_classes:
        raise InvalidLabel(
            f"label value {int(labels.data.max())} >= num_classes {labels.num_classes}"
        )


def one_hot(labels: LabelMap) -> np.ndarray:
    """Encode a label map as a (num_classes, X, Y, Z) float32 indicator array."""
    classes = np.arange(labels.num_classes, dtype=labels.data.dtype)
    return (labels.data[None] == classes[:, None, None, None]).astype(np.float32)


def from_one_hot(encoded: np.ndarray, spacing: Vec3 = (1.0, 1.0, 1.0),
                 origin: Vec3 = (0.0, 0.0, 0.0)) -> LabelMap:
    """Decode a (num_classes, X, Y, Z) indicator array back to a LabelMap."""
    if encoded.ndim != 4:
        raise ShapeMismatch(f"expected a 4D one-hot array, got shape {encoded.shape}")
    labels = np.argmax(encoded, axis=0)
    return LabelMap(labels, num_classes=encoded.shape[0], spacing=spacing, origin=origin)
