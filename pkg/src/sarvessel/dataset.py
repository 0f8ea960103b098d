"""Labelled chip datasets cut from scenes with ground truth.

Vessel chips are centred on every truth box. Sea chips are centred on
random pixels whose Chebyshev distance to every truth box is at least the
chip size, so no sea chip contains part of a vessel. Classes are balanced
one to one.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .scene_io import SEA, VESSEL, BoundingBox, Chip, GroundTruth, SarScene, extract_chip

SEA_ATTEMPTS = 10_000


def chebyshev_to_box(point: tuple[int, int], box: BoundingBox) -> int:
    r, c = point
    dr = max(box.row - r, 0, r - (box.bottom - 1))
    dc = max(box.col - c, 0, c - (box.right - 1))
    return max(dr, dc)


def vessel_chips(scene: SarScene, truth: GroundTruth, size: int) -> list[Chip]:
    return [extract_chip(scene, box.center, size, VESSEL) for box in truth.vessel_boxes]


def sample_sea_chip(scene: SarScene, truth: GroundTruth, size: int, rng: np.random.Generator) -> Chip:
    boxes = truth.vessel_boxes
    for _ in range(SEA_ATTEMPTS):
        center = (int(rng.integers(0, scene.rows)), int(rng.integers(0, scene.cols)))
        if all(chebyshev_to_box(center, b) >= size for b in boxes):
            return extract_chip(scene, center, size, SEA)
    raise ValidationError(f"no sea location at least {size} px from every vessel in scene {scene.scene_id!r}")


def build_chip_dataset(
    scenes: Sequence[tuple[SarScene, GroundTruth]],
    chip_size: int = 32,
    seed: int = 0,
    n_chips: Optional[int] = None,
) -> list[Chip]:
    """Balanced vessel/sea chips; ``n_chips`` caps the total (half per class).

    Vessel chips beyond the cap are dropped by a seeded draw. Sea chips are
    spread over the scenes round-robin. Output order is vessels then sea.
    """
    if not scenes:
        raise ValidationError("no scenes given")
    rng = np.random.Generator(np.random.PCG64(seed))
    vessels = [chip for scene, truth in scenes for chip in vessel_chips(scene, truth, chip_size)]
    if not vessels:
        raise ValidationError("the scenes hold no vessels")
    if n_chips is not None:
        half = n_chips // 2
        if half < 1 or half > len(vessels):
            raise ValidationError(f"cannot draw {half} vessel chips from {len(vessels)} vessels")
        keep = np.sort(rng.choice(len(vessels), size=half, replace=False))
        vessels = [vessels[i] for i in keep]
    sea = [
        sample_sea_chip(*scenes[i % len(scenes)], chip_size, rng)
        for i in range(len(vessels))
    ]
    return vessels + sea
