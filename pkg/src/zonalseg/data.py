"""Dataset geometry, on-disk slice trees and the synthetic phantom generator.

On-disk layout::

    <root>/<dataset_id>/patient_<NNN>/slice_<MMM>_img.png   16-bit grayscale
    <root>/<dataset_id>/patient_<NNN>/slice_<MMM>_wg.png    0/255 mask
    <root>/<dataset_id>/patient_<NNN>/slice_<MMM>_cg.png    0/255 mask

Patient and slice numbers are 1-based. Images are min-max normalized per
slice on load.

Random streams come from NumPy's PCG64 generator seeded through
``SeedSequence((seed, *keys))``, so every (patient, slice, epoch) stream is
reproducible independently of iteration order.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


class DatasetError(Exception):
    """Base class for problems with on-disk data."""


class MissingFileError(DatasetError):
    pass


class MaskShapeError(DatasetError):
    pass


class ZonalConstraintError(DatasetError):
    pass


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 stream for ``seed`` and any number of non-negative integer keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class DatasetDescriptor:
    id: str
    matrix_sizes: tuple[tuple[int, int], ...]
    slice_thickness: float
    inter_slice_spacing: float
    pixel_spacing: tuple[float, ...]
    slices_per_patient: int
    patient_count: int

    def __post_init__(self) -> None:
        values = [self.slice_thickness, self.inter_slice_spacing, *self.pixel_spacing, self.slices_per_patient,
                  self.patient_count]
        if any(v <= 0 for v in values) or any(h <= 0 or w <= 0 for h, w in self.matrix_sizes):
            raise ValueError(f"descriptor {self.id!r}: geometry values must be positive")

    def scaled(self, factor: float, **changes) -> "DatasetDescriptor":
        """Same acquisition with matrix sizes scaled to the nearest even size (desk-scale phantoms)."""
        sizes = tuple((max(2, 2 * round(h * factor / 2)), max(2, 2 * round(w * factor / 2)))
                      for h, w in self.matrix_sizes)
        spacing = tuple(s / factor for s in self.pixel_spacing)
        return replace(self, matrix_sizes=sizes, pixel_spacing=spacing, **changes)


D1 = DatasetDescriptor(
    id="d1", matrix_sizes=((288, 288),), slice_thickness=3.0, inter_slice_spacing=4.0,
    pixel_spacing=(0.625,), slices_per_patient=18, patient_count=21,
)
D2 = DatasetDescriptor(
    id="d2", matrix_sizes=((308, 384), (336, 448), (360, 448), (368, 448)), slice_thickness=1.25,
    inter_slice_spacing=1.0, pixel_spacing=(0.676, 0.721, 0.881, 0.789), slices_per_patient=64, patient_count=19,
)
# nominal geometry: only the matrix size and sample count are fixed for this set
PROMISE_LIKE = DatasetDescriptor(
    id="promise_like", matrix_sizes=((512, 512),), slice_thickness=3.0, inter_slice_spacing=3.0,
    pixel_spacing=(0.625,), slices_per_patient=32, patient_count=50,
)
PHANTOM = DatasetDescriptor(
    id="phantom", matrix_sizes=((288, 288),), slice_thickness=3.0, inter_slice_spacing=4.0,
    pixel_spacing=(0.625,), slices_per_patient=9, patient_count=4,
)
DESCRIPTORS = {d.id: d for d in (D1, D2, PROMISE_LIKE, PHANTOM)}


@dataclass
class SliceSample:
    image: np.ndarray
    wg_mask: np.ndarray
    cg_mask: np.ndarray
    pz_mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.wg_mask = np.asarray(self.wg_mask, dtype=bool)
        self.cg_mask = np.asarray(self.cg_mask, dtype=bool)
        if self.pz_mask is None:
            self.pz_mask = self.wg_mask & ~self.cg_mask
        else:
            self.pz_mask = np.asarray(self.pz_mask, dtype=bool)

    @property
    def shape(self) -> tuple:
        return self.image.shape

    def validate(self, where: str = "slice") -> None:
        for name in ("wg_mask", "cg_mask", "pz_mask"):
            if getattr(self, name).shape != self.image.shape:
                raise MaskShapeError(f"{where}: {name} shape {getattr(self, name).shape} != image {self.image.shape}")
        outside = int(np.count_nonzero(self.cg_mask & ~self.wg_mask))
        if outside:
            raise ZonalConstraintError(f"{where}: {outside} CG pixels lie outside the WG")
        if not np.array_equal(self.pz_mask, self.wg_mask & ~self.cg_mask):
            raise ZonalConstraintError(f"{where}: PZ is not WG minus CG")


@dataclass
class PatientRecord:
    patient_id: int
    slices: list[SliceSample] = field(default_factory=list)


def normalize_intensity(image: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant slice maps to zeros."""
    image = np.asarray(image, dtype=np.float32)
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        return np.zeros_like(image)
    return ((image - lo) / (hi - lo)).astype(np.float32)


# -- PNG I/O ------------------------------------------------------------------


def write_image_png(path: Path, image: np.ndarray) -> None:
    """Store a [0, 1] float image as 16-bit grayscale."""
    q = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path)


def write_mask_png(path: Path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im)


def read_mask_png(path: Path) -> np.ndarray:
    arr = read_png(path)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr > 0


def slice_paths(patient_dir: Path, index: int) -> dict[str, Path]:
    stem = f"slice_{index:03d}"
    return {kind: patient_dir / f"{stem}_{kind}.png" for kind in ("img", "wg", "cg")}


def write_patient(dataset_dir: Path, record: PatientRecord) -> None:
    patient_dir = dataset_dir / f"patient_{record.patient_id:03d}"
    patient_dir.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(record.slices, start=1):
        paths = slice_paths(patient_dir, i)
        write_image_png(paths["img"], s.image)
        write_mask_png(paths["wg"], s.wg_mask)
        write_mask_png(paths["cg"], s.cg_mask)


_PATIENT_RE = re.compile(r"^patient_(\d+)$")
_SLICE_RE = re.compile(r"^slice_(\d+)_(img|wg|cg)\.png$")


def load_dataset(root, descriptor: DatasetDescriptor | str) -> list[PatientRecord]:
    """Read ``<root>/<id>/patient_*/slice_*`` into patient records sorted by id."""
    dataset_id = descriptor if isinstance(descriptor, str) else descriptor.id
    dataset_dir = Path(root) / dataset_id
    if not dataset_dir.is_dir():
        raise MissingFileError(f"dataset directory {dataset_dir} does not exist")
    patients = []
    for child in dataset_dir.iterdir():
        m = _PATIENT_RE.match(child.name)
        if m and child.is_dir():
            patients.append((int(m.group(1)), child))
    records = []
    for patient_id, patient_dir in sorted(patients):
        indices = sorted({int(m.group(1)) for f in patient_dir.iterdir() if (m := _SLICE_RE.match(f.name))})
        slices = []
        for index in indices:
            where = f"{dataset_id}/patient_{patient_id:03d}/slice_{index:03d}"
            paths = slice_paths(patient_dir, index)
            for kind, path in paths.items():
                if not path.exists():
                    raise MissingFileError(f"{where}: missing {kind} file {path.name}")
            image = read_png(paths["img"]).astype(np.float32)
            if image.ndim == 3:
                image = image[..., 0]
            wg, cg = read_mask_png(paths["wg"]), read_mask_png(paths["cg"])
            if wg.shape != image.shape or cg.shape != image.shape:
                raise MaskShapeError(f"{where}: mask shapes {wg.shape}/{cg.shape} differ from image {image.shape}")
            sample = SliceSample(normalize_intensity(image), wg, cg)
            sample.validate(where)
            slices.append(sample)
        records.append(PatientRecord(patient_id, slices))
    return records


# -- phantom generator ----------------------------------------------------------


@dataclass(frozen=True)
class PhantomStyle:
    """Contrast profile of one simulated scanner/protocol."""

    cg_level: float
    pz_level: float
    tissue_level: float
    fat_level: float
    noise: float
    bias_field: float
    boundary_blur: float


STYLES = {
    # T2w appearance: hypo-intense CG, hyper-intense PZ
    "d1": PhantomStyle(cg_level=0.28, pz_level=0.62, tissue_level=0.40, fat_level=0.95, noise=0.035,
                       bias_field=0.0, boundary_blur=0.8),
    "d2": PhantomStyle(cg_level=0.52, pz_level=0.86, tissue_level=0.30, fat_level=0.80, noise=0.05,
                       bias_field=0.15, boundary_blur=1.2),
    "promise_like": PhantomStyle(cg_level=0.40, pz_level=0.70, tissue_level=0.35, fat_level=0.90, noise=0.045,
                                 bias_field=0.08, boundary_blur=1.0),
}


def _gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return image
    radius = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(image, radius, mode="edge")
    rows = sum(k * padded[:, i : i + image.shape[1]] for i, k in enumerate(kernel))
    return sum(k * rows[i : i + image.shape[0], :] for i, k in enumerate(kernel))


def _wobbly_ellipse(yy, xx, cy, cx, ry, rx, harmonics) -> np.ndarray:
    dy, dx = (yy - cy) / ry, (xx - cx) / rx
    theta = np.arctan2(dy, dx)
    radius = np.ones_like(theta)
    for amp, freq, phase in harmonics:
        radius = radius + amp * np.sin(freq * theta + phase)
    return dy * dy + dx * dx <= radius * radius


def phantom_slice(
    rng: np.random.Generator,
    shape: tuple[int, int],
    style: PhantomStyle,
    anatomy: dict,
    position: float,
    with_prostate: bool = True,
) -> SliceSample:
    """One synthetic axial slice.

    ``position`` in [0, 1] runs from apex to base and scales the gland size.
    """
    h, w = shape
    m = min(h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = h / 2 + anatomy["offset"][0] * m, w / 2 + anatomy["offset"][1] * m

    body = ((yy - h / 2) / (0.46 * h)) ** 2 + ((xx - w / 2) / (0.47 * w)) ** 2 <= 1
    inner = ((yy - h / 2) / (0.40 * h)) ** 2 + ((xx - w / 2) / (0.42 * w)) ** 2 <= 1
    image = np.zeros(shape)
    image[body] = style.fat_level
    texture = _gaussian_blur(rng.normal(0.0, 1.0, shape), 3.0)
    image[inner] = style.tissue_level + 0.05 * texture[inner] / (texture.std() + 1e-9)

    scale = 0.75 + 0.25 * math.sin(math.pi * position)
    wg = np.zeros(shape, dtype=bool)
    cg = np.zeros(shape, dtype=bool)
    if with_prostate:
        ry, rx = anatomy["wg_axes"][0] * m * scale, anatomy["wg_axes"][1] * m * scale
        wg = _wobbly_ellipse(yy, xx, cy, cx, ry, rx, anatomy["wg_harmonics"])
        cg_ry, cg_rx = ry * anatomy["cg_ratio"][0], rx * anatomy["cg_ratio"][1]
        # CG sits anterior (up), PZ forms the posterior crescent
        cg_cy = cy - anatomy["cg_shift"] * (ry - cg_ry)
        cg = _wobbly_ellipse(yy, xx, cg_cy, cx, cg_ry, cg_rx, anatomy["cg_harmonics"]) & wg
        labels = np.where(cg, style.cg_level, style.pz_level)
        soft_wg = _gaussian_blur(wg.astype(np.float64), style.boundary_blur)
        soft_labels = _gaussian_blur(np.where(wg, labels, style.pz_level), style.boundary_blur)
        image = image * (1 - soft_wg) + soft_labels * soft_wg

    if style.bias_field:
        angle = anatomy["bias_angle"]
        ramp = ((yy / h - 0.5) * math.sin(angle) + (xx / w - 0.5) * math.cos(angle))
        image = image * (1 + style.bias_field * ramp)
    image = image + rng.normal(0.0, style.noise, shape) * body
    return SliceSample(np.clip(image, 0.0, 1.0).astype(np.float32), wg, cg)


def _anatomy(rng: np.random.Generator) -> dict:
    def harmonics(amp):
        return [(rng.uniform(0, amp), int(k), rng.uniform(0, 2 * math.pi)) for k in (2, 3)]

    return {
        "offset": (rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03)),
        "wg_axes": (rng.uniform(0.22, 0.27), rng.uniform(0.27, 0.32)),
        "cg_ratio": (rng.uniform(0.55, 0.72), rng.uniform(0.60, 0.78)),
        "cg_shift": rng.uniform(0.2, 0.6),
        "wg_harmonics": harmonics(0.05),
        "cg_harmonics": harmonics(0.06),
        "bias_angle": rng.uniform(0, 2 * math.pi),
    }


def generate_phantom_dataset(
    root,
    dataset_id: str,
    seed: int,
    patient_count: int,
    slices_per_patient: int,
    sizes: Sequence[tuple[int, int]] = ((288, 288),),
    style: Optional[str] = None,
    empty_margin: tuple[int, int] = (0, 0),
    write: bool = True,
) -> list[PatientRecord]:
    """Deterministic synthetic dataset, optionally written to ``<root>/<dataset_id>``.

    Each patient gets one matrix size (cycling through ``sizes``), a random
    gland anatomy and ``slices_per_patient`` prostate slices. ``empty_margin``
    prepends/appends slices without prostate. Stored images are quantized to
    16 bit; the returned records hold exactly what :func:`load_dataset` reads back.
    """
    style_obj = STYLES[style or dataset_id]
    for h, w in sizes:
        if min(h, w) < 32 or h % 2 or w % 2:
            raise ValueError(f"phantom matrix {h}x{w} must be even and at least 32")
    dataset_index = sum(ord(c) for c in dataset_id)
    dataset_dir = Path(root) / dataset_id if write else None
    records = []
    for pid in range(1, patient_count + 1):
        rng = make_rng(seed, dataset_index, pid)
        anatomy = _anatomy(rng)
        shape = tuple(sizes[(pid - 1) % len(sizes)])
        before, after = empty_margin
        total = before + slices_per_patient + after
        if dataset_dir is not None:
            patient_dir = dataset_dir / f"patient_{pid:03d}"
            patient_dir.mkdir(parents=True, exist_ok=True)
        slices = []
        for k in range(total):
            has_prostate = before <= k < before + slices_per_patient
            position = (k - before + 0.5) / slices_per_patient if has_prostate else 0.0
            raw = phantom_slice(make_rng(seed, dataset_index, pid, k + 1), shape, style_obj, anatomy, position,
                                has_prostate)
            quantized = np.round(raw.image * 65535.0).astype(np.uint16)
            slices.append(SliceSample(normalize_intensity(quantized), raw.wg_mask, raw.cg_mask))
            if dataset_dir is not None:
                paths = slice_paths(patient_dir, k + 1)
                Image.fromarray(quantized).save(paths["img"])
                write_mask_png(paths["wg"], raw.wg_mask)
                write_mask_png(paths["cg"], raw.cg_mask)
        records.append(PatientRecord(pid, slices))
    return records
