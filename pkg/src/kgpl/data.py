"""Synthetic phantoms, volume IO, preprocessing, augmentation and splits.

Phantoms are nested deformed ellipsoids: tissue shells around a common
center, each shell carved into angular sectors that serve as structures.
The innermost shell grows with subject age (scaled by ``age_effect``),
mimicking the age-driven anatomy drift the prompts are meant to capture.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import LabelMap, Sex, SubjectAttributes, Volume, validate_pair
from .errors import (BadRatios, BadSpec, EmptyForeground, IOFailure,
                     ShapeMismatch, UnsupportedFormat)
from .nifti import read_nifti, write_nifti
from .tensorio import read_tensor, write_tensor

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 32
    num_tissues: int = 3
    num_structures: int = 9
    age_effect: float = 0.5
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.size < 8:
            raise BadSpec(f"size must be >= 8, got {self.size}")
        if self.num_tissues < 1:
            raise BadSpec(f"num_tissues must be >= 1, got {self.num_tissues}")
        if self.num_structures < self.num_tissues:
            raise BadSpec("need at least one structure per tissue")
        if not (0.0 <= self.age_effect <= 1.0):
            raise BadSpec(f"age_effect must be in [0, 1], got {self.age_effect}")
        if self.noise_sigma < 0:
            raise BadSpec(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass(frozen=True, eq=False)
class Sample:
    volume: Volume
    tissue: LabelMap
    structure: LabelMap
    attrs: SubjectAttributes

    def __post_init__(self):
        if not (self.volume.shape == self.tissue.shape == self.structure.shape):
            raise ShapeMismatch("volume and label grids must share one shape")


def structure_to_tissue_table(num_tissues: int, num_structures: int) -> np.ndarray:
    """Lookup from structure label to its parent tissue label (0 stays 0)."""
    counts = [num_structures // num_tissues] * num_tissues
    for i in range(num_structures % num_tissues):
        counts[i] += 1
    table = [0]
    for tissue, n in enumerate(counts, start=1):
        table.extend([tissue] * n)
    return np.asarray(table, dtype=np.uint8)


def tissue_view(structure: LabelMap, num_tissues: int) -> LabelMap:
    """Map a structure label map back to its tissue label map."""
    table = structure_to_tissue_table(num_tissues, structure.num_classes - 1)
    return LabelMap(table[structure.data], num_classes=num_tissues + 1,
                    spacing=structure.spacing, origin=structure.origin)


def _phantom_rng(spec: PhantomSpec, attrs: SubjectAttributes) -> np.random.Generator:
    # Age is deliberately excluded: it enters only through the analytic
    # inner-radius term, so age_effect=0 keeps geometry age-independent.
    blob = f"{spec.seed}|{attrs.sex.value}|{attrs.diagnosis}".encode("utf-8")
    return np.random.default_rng(int.from_bytes(hashlib.sha256(blob).digest()[:8], "little"))


def generate_phantom(spec: PhantomSpec, attrs: SubjectAttributes) -> Sample:
    """Deterministic synthetic sample for (spec.seed, attrs)."""
    rng = _phantom_rng(spec, attrs)
    n = spec.size
    k = spec.num_tissues

    center = (n - 1) / 2.0 + rng.uniform(-0.04, 0.04, size=3) * n
    radii = 0.42 * n * rng.uniform(0.85, 1.0, size=3)

    idx = np.indices((n, n, n), dtype=np.float64)
    rel = [(idx[a] - center[a]) / radii[a] for a in range(3)]
    rho = np.sqrt(rel[0] ** 2 + rel[1] ** 2 + rel[2] ** 2)

    # Smooth low-frequency boundary deformation shared by all shells.
    coords = idx / n
    deform = np.zeros((n, n, n), dtype=np.float64)
    for _ in range(3):
        amp = rng.uniform(0.01, 0.04)
        waves = rng.integers(1, 3, size=3)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
        arg = sum(2.0 * np.pi * waves[a] * coords[a] + phase[a] for a in range(3))
        deform += amp * np.cos(arg)
    rho = rho + deform

    # Shell thresholds from the outer boundary (1.0) down to the inner
    # radius, which expands with age.
    r_inner = 0.45 + 0.25 * spec.age_effect * (attrs.age_years / 130.0)
    if k > 1:
        thresholds = [r_inner + (1.0 - r_inner) * (k - i) / (k - 1) for i in range(1, k + 1)]
    else:
        thresholds = [1.0]
    tissue = np.zeros((n, n, n), dtype=np.uint8)
    for t in thresholds:
        tissue += (rho < t).astype(np.uint8)

    # Carve each tissue shell into angular sectors around the z axis.
    table = structure_to_tissue_table(k, spec.num_structures)
    phi = np.arctan2(idx[1] - center[1], idx[0] - center[0])  # [-pi, pi)
    structure = np.zeros((n, n, n), dtype=np.uint8)
    next_label = 1
    for t in range(1, k + 1):
        sectors = int((table == t).sum())
        offset = rng.uniform(0.0, 2.0 * np.pi)
        ang = np.mod(phi + offset, 2.0 * np.pi)
        sector_idx = np.minimum((ang / (2.0 * np.pi) * sectors).astype(np.int64), sectors - 1)
        region = tissue == t
        structure[region] = (next_label + sector_idx[region]).astype(np.uint8)
        next_label += sectors

    sep = max(3.0 * spec.noise_sigma, 0.25)
    means = np.concatenate([[0.0], 0.5 + sep * np.arange(k)])
    data = means[tissue].astype(np.float32)
    fg = tissue > 0
    if spec.noise_sigma > 0:
        noise = rng.normal(0.0, spec.noise_sigma, size=int(fg.sum()))
        data[fg] = np.maximum(data[fg] + noise.astype(np.float32), 1e-3)

    volume = Volume(data)
    tissue_map = LabelMap(tissue, num_classes=k + 1)
    structure_map = LabelMap(structure, num_classes=spec.num_structures + 1)
    sample = Sample(volume=volume, tissue=tissue_map, structure=structure_map, attrs=attrs)
    assert np.array_equal(table[structure_map.data], tissue_map.data)
    return sample


def corrupt_boundary_labels(labels: LabelMap, fraction: float, seed: int) -> LabelMap:
    """Relabel ``fraction`` of label-boundary voxels to a random other class.

    Emulates sub-optimal annotations for the pretraining stage; the
    original map is untouched.
    """
    data = labels.data
    boundary = np.zeros(labels.shape, dtype=bool)
    for axis in range(3):
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[axis] = slice(0, -1)
        sl_b[axis] = slice(1, None)
        diff = data[tuple(sl_a)] != data[tuple(sl_b)]
        boundary[tuple(sl_a)] |= diff
        boundary[tuple(sl_b)] |= diff
    coords = np.argwhere(boundary)
    rng = np.random.default_rng(seed)
    n_pick = int(fraction * len(coords))
    if n_pick == 0:
        return labels
    picks = coords[rng.choice(len(coords), size=n_pick, replace=False)]
    out = data.copy()
    current = out[picks[:, 0], picks[:, 1], picks[:, 2]].astype(np.int64)
    shift = rng.integers(1, labels.num_classes, size=n_pick)
    out[picks[:, 0], picks[:, 1], picks[:, 2]] = ((current + shift) % labels.num_classes).astype(out.dtype)
    return LabelMap(out, num_classes=labels.num_classes,
                    spacing=labels.spacing, origin=labels.origin)


# ---------------------------------------------------------------------------
# Volume / label-map IO


def _kind(path: Path) -> str:
    name = path.name
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return "nifti"
    if name.endswith(".kgt"):
        return "kgt"
    raise UnsupportedFormat(f"unknown volume format for {path} (use .nii, .nii.gz or .kgt)")


def save_volume(path, volume: Volume) -> None:
    path = Path(path)
    if _kind(path) == "nifti":
        write_nifti(path, volume.data, volume.spacing, volume.origin)
    else:
        write_tensor(path, volume.data,
                     meta={"kind": "volume", "spacing": list(volume.spacing),
                           "origin": list(volume.origin)})


def load_volume(path) -> Volume:
    path = Path(path)
    if _kind(path) == "nifti":
        data, spacing, origin = read_nifti(path)
        return Volume(np.asarray(data, dtype=np.float32), spacing, origin)
    arr, meta = read_tensor(path)
    return Volume(arr, tuple(meta.get("spacing", (1.0, 1.0, 1.0))),
                  tuple(meta.get("origin", (0.0, 0.0, 0.0))))


def save_labelmap(path, labels: LabelMap) -> None:
    path = Path(path)
    if _kind(path) == "nifti":
        write_nifti(path, labels.data, labels.spacing, labels.origin)
    else:
        write_tensor(path, labels.data,
                     meta={"kind": "labelmap", "num_classes": labels.num_classes,
                           "spacing": list(labels.spacing), "origin": list(labels.origin)})


def load_labelmap(path, num_classes: Optional[int] = None) -> LabelMap:
    path = Path(path)
    if _kind(path) == "nifti":
        data, spacing, origin = read_nifti(path)
        if num_classes is None:
            num_classes = int(data.max()) + 1
        return LabelMap(np.asarray(data), num_classes, spacing, origin)
    arr, meta = read_tensor(path)
    if num_classes is None:
        num_classes = int(meta.get("num_classes", int(arr.max()) + 1))
    return LabelMap(arr, num_classes, tuple(meta.get("spacing", (1.0, 1.0, 1.0))),
                    tuple(meta.get("origin", (0.0, 0.0, 0.0))))


# ---------------------------------------------------------------------------
# Preprocessing


@dataclass(frozen=True)
class CropBox:
    """Per-axis (start, size) in source coordinates; negative start pads."""

    starts: tuple[int, int, int]
    dims: tuple[int, int, int]


def compute_crop(volume: Volume, crop: Sequence[int]) -> CropBox:
    fg = np.argwhere(volume.data != 0)
    if fg.size == 0:
        raise EmptyForeground("volume has no nonzero intensities")
    lo = fg.min(axis=0)
    hi = fg.max(axis=0)
    center = (lo + hi) // 2
    starts = tuple(int(center[a] - (crop[a] - 1) // 2) for a in range(3))
    return CropBox(starts=starts, dims=tuple(int(c) for c in crop))


def apply_crop(arr: np.ndarray, box: CropBox) -> np.ndarray:
    out = np.zeros(box.dims, dtype=arr.dtype)
    src = []
    dst = []
    for a in range(3):
        s0 = max(box.starts[a], 0)
        s1 = min(box.starts[a] + box.dims[a], arr.shape[a])
        if s1 <= s0:
            return out
        src.append(slice(s0, s1))
        dst.append(slice(s0 - box.starts[a], s1 - box.starts[a]))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def preprocess(volume: Volume, crop: Sequence[int]) -> Volume:
    """Foreground-centered crop/pad plus z-scoring over foreground voxels."""
    box = compute_crop(volume, crop)
    data = apply_crop(volume.data, box).astype(np.float32)
    fg = data != 0
    if not fg.any():
        raise EmptyForeground("crop region contains no foreground")
    mu = float(data[fg].mean())
    sigma = float(data[fg].std())
    if sigma > 1e-12:
        data[fg] = (data[fg] - mu) / sigma
    else:
        data[fg] = data[fg] - mu
    return Volume(data, volume.spacing, volume.origin)


def preprocess_sample(sample: Sample, crop: Sequence[int]) -> Sample:
    """Apply one crop geometry to the volume and both label maps."""
    box = compute_crop(sample.volume, crop)
    vol = preprocess(sample.volume, crop)
    tissue = LabelMap(apply_crop(sample.tissue.data, box), sample.tissue.num_classes,
                      sample.tissue.spacing, sample.tissue.origin)
    structure = LabelMap(apply_crop(sample.structure.data, box), sample.structure.num_classes,
                         sample.structure.spacing, sample.structure.origin)
    return Sample(volume=vol, tissue=tissue, structure=structure, attrs=sample.attrs)


# ---------------------------------------------------------------------------
# Augmentation


def flip_sample(sample: Sample, axes: Sequence[bool]) -> Sample:
    flip_axes = tuple(a for a in range(3) if axes[a])
    if not flip_axes:
        return sample

    def f(arr):
        return np.flip(arr, axis=flip_axes).copy()

    return Sample(
        volume=Volume(f(sample.volume.data), sample.volume.spacing, sample.volume.origin),
        tissue=LabelMap(f(sample.tissue.data), sample.tissue.num_classes,
                        sample.tissue.spacing, sample.tissue.origin),
        structure=LabelMap(f(sample.structure.data), sample.structure.num_classes,
                           sample.structure.spacing, sample.structure.origin),
        attrs=sample.attrs,
    )


def augment_flip(sample: Sample, rng: np.random.Generator) -> Sample:
    """Independently flip each axis with probability 0.5."""
    return flip_sample(sample, rng.random(3) < 0.5)


# ---------------------------------------------------------------------------
# Dataset splitting and on-disk layout


def split(items: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1),
          seed: int = 0) -> dict[str, list]:
    """Deterministic disjoint train/val/test partition, sizes within 1 of exact."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative values summing to 1, got {ratios}")
    n = len(items)
    exact = [n * r for r in ratios]
    counts = [int(e) for e in exact]
    fractions = sorted(range(3), key=lambda i: (exact[i] - counts[i], -i), reverse=True)
    for i in range(n - sum(counts)):
        counts[fractions[i % 3]] += 1
    order = np.random.default_rng(seed).permutation(n)
    out = {}
    cursor = 0
    for name, c in zip(("train", "val", "test"), counts):
        out[name] = [items[int(i)] for i in order[cursor:cursor + c]]
        cursor += c
    return out


@dataclass(frozen=True)
class SampleRef:
    sample_id: str
    volume_path: str
    tissue_path: str
    structure_path: str
    attrs: SubjectAttributes
    split: str


_DIAGNOSIS_POOL = (None, "mild cognitive impairment")


def _draw_attrs(rng: np.random.Generator) -> SubjectAttributes:
    age = int(rng.integers(5, 96))
    sex = Sex.MALE if rng.random() < 0.5 else Sex.FEMALE
    diagnosis = _DIAGNOSIS_POOL[1] if rng.random() < 0.3 else None
    return SubjectAttributes(age_years=age, sex=sex, diagnosis=diagnosis)


def _child_seed(base: int, index: int) -> int:
    blob = f"{base}|{index}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def make_dataset(spec: PhantomSpec, count: int, out_dir,
                 ratios: Sequence[float] = (0.8, 0.1, 0.1), fmt: str = "kgt") -> Path:
    """Generate ``count`` phantoms plus a manifest; returns the manifest path."""
    if count < 1:
        raise BadSpec(f"count must be >= 1, got {count}")
    if fmt not in ("kgt", "nifti"):
        raise UnsupportedFormat(f"dataset format must be 'kgt' or 'nifti', got {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "kgt" if fmt == "kgt" else "nii.gz"
    attr_rng = np.random.default_rng(spec.seed)
    ids = [f"s{i:04d}" for i in range(count)]
    assignment = {}
    for name, members in split(ids, ratios, seed=spec.seed).items():
        for sid in members:
            assignment[sid] = name
    entries = []
    for i, sid in enumerate(ids):
        attrs = _draw_attrs(attr_rng)
        sample = generate_phantom(replace(spec, seed=_child_seed(spec.seed, i)), attrs)
        paths = {
            "volume": f"{sid}_volume.{ext}",
            "tissue": f"{sid}_tissue.{ext}",
            "structure": f"{sid}_structure.{ext}",
        }
        save_volume(out_dir / paths["volume"], sample.volume)
        save_labelmap(out_dir / paths["tissue"], sample.tissue)
        save_labelmap(out_dir / paths["structure"], sample.structure)
        entries.append({
            "id": sid,
            "volume": paths["volume"],
            "tissue": paths["tissue"],
            "structure": paths["structure"],
            "attrs": {"age_years": attrs.age_years, "sex": attrs.sex.value,
                      "diagnosis": attrs.diagnosis},
            "split": assignment[sid],
        })
    manifest = {
        "phantom_spec": asdict(spec),
        "count": count,
        "format": fmt,
        "samples": entries,
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(dataset_dir) -> tuple[PhantomSpec, list[SampleRef]]:
    dataset_dir = Path(dataset_dir)
    path = dataset_dir / MANIFEST_NAME
    if not path.exists():
        raise IOFailure(f"no {MANIFEST_NAME} in {dataset_dir}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    spec = PhantomSpec(**doc["phantom_spec"])
    refs = []
    for e in doc["samples"]:
        a = e["attrs"]
        attrs = SubjectAttributes(age_years=a["age_years"], sex=Sex(a["sex"]),
                                  diagnosis=a.get("diagnosis"))
        refs.append(SampleRef(sample_id=e["id"], volume_path=e["volume"],
                              tissue_path=e["tissue"], structure_path=e["structure"],
                              attrs=attrs, split=e["split"]))
    return spec, refs


def load_sample(dataset_dir, ref: SampleRef, spec: PhantomSpec) -> Sample:
    dataset_dir = Path(dataset_dir)
    volume = load_volume(dataset_dir / ref.volume_path)
    tissue = load_labelmap(dataset_dir / ref.tissue_path, num_classes=spec.num_tissues + 1)
    structure = load_labelmap(dataset_dir / ref.structure_path,
                              num_classes=spec.num_structures + 1)
    validate_pair(volume, tissue)
    validate_pair(volume, structure)
    return Sample(volume=volume, tissue=tissue, structure=structure, attrs=ref.attrs)
