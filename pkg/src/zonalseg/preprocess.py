"""Geometry harmonization, whole-gland masking and training augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PatientRecord, SliceSample, make_rng

log = logging.getLogger(__name__)

PRETRAIN_SLICES = 25


@dataclass(frozen=True)
class PreprocConfig:
    target_size: tuple[int, int] = (288, 288)
    crop_size: tuple[int, int] = (256, 256)
    flip_probability: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if any(c > t for c, t in zip(self.crop_size, self.target_size)):
            raise ValueError(f"crop_size {self.crop_size} exceeds target_size {self.target_size}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must lie in [0, 1]")


DESK_PREPROC = PreprocConfig(target_size=(72, 72), crop_size=(64, 64))


def center_offsets(shape: Sequence[int], target: Sequence[int]) -> tuple[int, int]:
    (H, W), (h, w) = shape[:2], target
    if H < h or W < w:
        raise ValueError(f"cannot center-crop {H}x{W} to larger {h}x{w}")
    return (H - h) // 2, (W - w) // 2


def center_crop(array: np.ndarray, target: Sequence[int]) -> np.ndarray:
    h, w = target
    top, left = center_offsets(array.shape, target)
    return array[top : top + h, left : left + w]


def square_crop(array: np.ndarray) -> np.ndarray:
    """Largest centered square."""
    side = min(array.shape[:2])
    return center_crop(array, (side, side))


def _source_coords(out_size: int, in_size: int) -> np.ndarray:
    # pixel centers, corners not aligned
    return (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5


def resize(image: np.ndarray, target: Sequence[int], mode: str = "bilinear") -> np.ndarray:
    """Resample a 2D array to ``target`` (h, w).

    ``bilinear`` maps output pixel centers to ``(i + 0.5) * in/out - 0.5`` in
    input coordinates, clamped at the border. ``nearest`` picks input index
    ``floor((i + 0.5) * in/out)``, so binary masks stay binary.
    """
    h, w = target
    H, W = image.shape
    if h <= 0 or w <= 0:
        raise ValueError(f"target size must be positive, got {target}")
    if (h, w) == (H, W):
        return image.copy()
    if mode == "nearest":
        rows = np.minimum(np.floor((np.arange(h) + 0.5) * H / h).astype(int), H - 1)
        cols = np.minimum(np.floor((np.arange(w) + 0.5) * W / w).astype(int), W - 1)
        return image[rows[:, None], cols[None, :]]
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    src = image.astype(np.float64)
    y = np.clip(_source_coords(h, H), 0, H - 1)
    x = np.clip(_source_coords(w, W), 0, W - 1)
    y0 = np.floor(y).astype(int)
    x0 = np.floor(x).astype(int)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return (top * (1 - fy) + bottom * fy).astype(image.dtype if image.dtype.kind == "f" else np.float32)


def apply_wg_mask(image: np.ndarray, wg_mask: np.ndarray) -> np.ndarray:
    if image.shape != wg_mask.shape:
        raise ValueError(f"image {image.shape} and WG mask {wg_mask.shape} differ in shape")
    return (image * (wg_mask != 0)).astype(image.dtype)


def _map_sample(sample: SliceSample, image_fn, mask_fn) -> SliceSample:
    return SliceSample(image_fn(sample.image), mask_fn(sample.wg_mask), mask_fn(sample.cg_mask))


def harmonize(sample: SliceSample, target_size: Sequence[int]) -> SliceSample:
    """Crop to the largest centered square, then resize to ``target_size``."""
    target = tuple(target_size)
    if sample.shape == target:
        return sample
    return _map_sample(
        sample,
        lambda a: resize(square_crop(a), target, "bilinear"),
        lambda m: resize(square_crop(m), target, "nearest"),
    )


def harmonize_records(records: Sequence[PatientRecord], target_size: Sequence[int]) -> list[PatientRecord]:
    return [PatientRecord(r.patient_id, [harmonize(s, target_size) for s in r.slices]) for r in records]


def crop_sample(sample: SliceSample, top: int, left: int, size: Sequence[int]) -> SliceSample:
    h, w = size
    window = lambda a: a[top : top + h, left : left + w]  # noqa: E731
    return _map_sample(sample, window, window)


def flip_sample(sample: SliceSample) -> SliceSample:
    mirror = lambda a: a[:, ::-1].copy()  # noqa: E731
    return _map_sample(sample, mirror, mirror)


def augment(sample: SliceSample, config: PreprocConfig, rng: np.random.Generator) -> SliceSample:
    """Random crop (uniform offset per axis) and horizontal flip, shared by image and masks."""
    H, W = sample.shape
    h, w = config.crop_size
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    flip = bool(rng.random() < config.flip_probability)
    out = crop_sample(sample, top, left, config.crop_size)
    return flip_sample(out) if flip else out


def eval_view(sample: SliceSample, config: PreprocConfig) -> SliceSample:
    """Deterministic evaluation crop: centered, never flipped."""
    top, left = center_offsets(sample.shape, config.crop_size)
    return crop_sample(sample, top, left, config.crop_size)


def sample_rng(seed: int, patient_id: int, slice_id: int, epoch: int) -> np.random.Generator:
    return make_rng(seed, patient_id, slice_id, epoch)


def prepare_pretraining_data(
    records: Sequence[PatientRecord], target_size: Sequence[int] = (288, 288), slices_per_sample: int = PRETRAIN_SLICES
) -> list[SliceSample]:
    """Whole-gland pre-training slices.

    Slices without prostate are dropped; of the remaining ones the central
    ``slices_per_sample`` are kept (all of them, with a warning, when fewer
    exist). Images are resized to ``target_size``; the WG mask is the target.
    """
    out = []
    for record in records:
        with_prostate = [s for s in record.slices if s.wg_mask.any()]
        n = len(with_prostate)
        if n < slices_per_sample:
            log.warning("sample %d has only %d prostate slices (< %d); keeping all", record.patient_id, n,
                        slices_per_sample)
            kept = with_prostate
        else:
            start = (n - slices_per_sample) // 2
            kept = with_prostate[start : start + slices_per_sample]
        for s in kept:
            image = resize(s.image, target_size, "bilinear")
            wg = resize(s.wg_mask, target_size, "nearest")
            out.append(SliceSample(image, wg, np.zeros_like(wg)))
    return out
