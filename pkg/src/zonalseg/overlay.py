"""Contour overlays of predicted and gold zonal masks on the input slice."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .postprocess import ZonalMask

# RGB contour colours, drawn in this order (later ones win on shared pixels)
GOLD_PZ_COLOR = (0, 120, 255)
GOLD_CG_COLOR = (0, 200, 0)
PRED_CG_COLOR = (255, 40, 40)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one of their 8 neighbours outside the mask.

    Pixels beyond the image border count as background, so a full-frame mask
    yields the one-pixel frame.
    """
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    h, w = mask.shape
    interior = np.ones_like(mask)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            interior &= padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return mask & ~interior


def to_gray_rgb(image: np.ndarray) -> np.ndarray:
    """[0, 1] float (or any range) slice to an 8-bit RGB array."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min(initial=0.0)), float(image.max(initial=0.0))
    scaled = (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)
    gray = np.round(scaled * 255.0).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def overlay_array(image: np.ndarray, zonal: Optional[ZonalMask], gold: Optional[ZonalMask]) -> np.ndarray:
    rgb = to_gray_rgb(image)
    layers = []
    if gold is not None:
        layers += [(gold.pz, GOLD_PZ_COLOR), (gold.cg, GOLD_CG_COLOR)]
    if zonal is not None:
        layers.append((zonal.cg, PRED_CG_COLOR))
    for mask, color in layers:
        if mask.shape != rgb.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} != image shape {rgb.shape[:2]}")
        rgb[boundary(mask)] = color
    return rgb


def render_overlay(image: np.ndarray, zonal: Optional[ZonalMask], gold: Optional[ZonalMask], path) -> Path:
    """Write an RGB PNG with predicted CG (red), gold CG (green) and gold PZ (blue) contours."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay_array(image, zonal, gold)).save(path)
    return path
