"""CG mask refinement and PZ derivation.

Order is fixed: binarize -> fill holes -> drop small components -> PZ = WG \\ CG.
Background is traversed with 4-connectivity and foreground components with
8-connectivity, the usual complementary pairing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ZonalInvariantError(AssertionError):
    pass


@dataclass(frozen=True)
class ZonalMask:
    wg: np.ndarray
    cg: np.ndarray
    pz: np.ndarray

    def violations(self) -> int:
        """Pixels breaking ``wg == cg | pz`` or ``cg & pz == {}`` or ``cg <= wg``."""
        union = np.count_nonzero(self.wg != (self.cg | self.pz))
        overlap = np.count_nonzero(self.cg & self.pz)
        outside = np.count_nonzero(self.cg & ~self.wg)
        return int(union + overlap + outside)

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise ZonalInvariantError(f"zonal mask violates WG = CG + PZ at {bad} pixels")


_OFFSETS_4 = ((-1, 0), (0, -1))
_OFFSETS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1))


def label_components(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Two-pass union-find labeling; labels are 1..n in raster order of first pixel."""
    mask = np.asarray(mask, dtype=bool)
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    offsets = _OFFSETS_8 if connectivity == 8 else _OFFSETS_4
    h, w = mask.shape
    provisional = np.zeros((h, w), dtype=np.int64)
    parent = [0]

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for y, x in zip(*np.nonzero(mask)):
        neighbours = []
        for dy, dx in offsets:
            ny, nx = y + dy, x + dx
            if 0 <= ny and 0 <= nx < w and provisional[ny, nx]:
                neighbours.append(provisional[ny, nx])
        if not neighbours:
            parent.append(len(parent))
            provisional[y, x] = len(parent) - 1
            continue
        roots = {find(n) for n in neighbours}
        smallest = min(roots)
        for r in roots:
            parent[r] = smallest
        provisional[y, x] = smallest

    final = np.zeros(len(parent), dtype=np.int64)
    count = 0
    for i in range(1, len(parent)):
        r = find(i)
        if r == i:
            count += 1
            final[i] = count
    for i in range(1, len(parent)):
        final[i] = final[find(i)]
    return final[provisional], count


def binarize(prediction_logits: np.ndarray, wg_mask: np.ndarray) -> np.ndarray:
    """``sigmoid(logit) > 0.5``, i.e. strictly positive logits, restricted to the WG."""
    if prediction_logits.shape != wg_mask.shape:
        raise ValueError(f"logits {prediction_logits.shape} and WG {wg_mask.shape} differ in shape")
    return (np.asarray(prediction_logits) > 0) & np.asarray(wg_mask, dtype=bool)


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Background pixels not 4-connected to the image border become foreground."""
    mask = np.asarray(mask, dtype=bool)
    labels, _ = label_components(~mask, connectivity=4)
    border = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    outside = np.isin(labels, border[border > 0])
    return ~outside


def small_area_threshold(wg_mask: np.ndarray) -> int:
    return int(np.count_nonzero(wg_mask)) // 8


def remove_small_components(mask: np.ndarray, wg_mask: np.ndarray) -> np.ndarray:
    """Drop 8-connected components with fewer than ``floor(|WG| / 8)`` pixels."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != wg_mask.shape:
        raise ValueError(f"mask {mask.shape} and WG {wg_mask.shape} differ in shape")
    threshold = small_area_threshold(wg_mask)
    labels, count = label_components(mask, connectivity=8)
    if count == 0:
        return mask.copy()
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    keep = areas >= threshold
    keep[0] = False
    return keep[labels]


def derive_pz(wg: np.ndarray, cg_refined: np.ndarray) -> ZonalMask:
    wg = np.asarray(wg, dtype=bool)
    cg = np.asarray(cg_refined, dtype=bool)
    if np.any(cg & ~wg):
        raise ZonalInvariantError("refined CG extends outside the WG")
    return ZonalMask(wg, cg, wg & ~cg)


def postprocess(prediction_logits: np.ndarray, wg_mask: np.ndarray) -> ZonalMask:
    wg = np.asarray(wg_mask, dtype=bool)
    cg = binarize(prediction_logits, wg)
    # a hole in the WG itself must not leak into the CG
    cg = fill_holes(cg) & wg
    cg = remove_small_components(cg, wg)
    return derive_pz(wg, cg)
