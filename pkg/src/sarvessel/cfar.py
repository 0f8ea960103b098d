"""Constant-false-alarm-rate detection on a single intensity band.

Clutter statistics for the cell under test come from a square training
ring: cells at Chebyshev distance ``guard_radius < d <= train_radius``.
Ring cells falling outside the image are dropped, and the CA threshold
factor is recomputed for the reduced cell count, so border pixels keep
the designed false-alarm probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage

from .errors import ConfigError, NonFiniteError, ValidationError
from .scene_io import BoundingBox


@dataclass(frozen=True)
class CfarConfig:
    guard_radius: int = 8
    train_radius: int = 12
    pfa: float = 1e-3
    variant: Literal["ca", "two_param"] = "ca"
    two_param_k: float = 3.0

    def validate(self) -> None:
        if self.guard_radius < 0:
            raise ConfigError("guard_radius must be >= 0")
        if self.train_radius <= self.guard_radius:
            raise ConfigError("train_radius must exceed guard_radius")
        if (2 * self.train_radius + 1) ** 2 - (2 * self.guard_radius + 1) ** 2 < 8:
            raise ConfigError("training ring must hold at least 8 cells")
        if not 0 < self.pfa < 1:
            raise ConfigError(f"pfa must lie in (0, 1), got {self.pfa}")
        if self.variant not in ("ca", "two_param"):
            raise ConfigError(f"unknown CFAR variant {self.variant!r}")
        if not self.two_param_k > 0:
            raise ConfigError("two_param_k must be positive")


@dataclass
class CfarResult:
    mask: np.ndarray
    boxes: list[BoundingBox] = field(default_factory=list)

    @property
    def n_detections(self) -> int:
        return int(np.count_nonzero(self.mask))


def ca_threshold_factor(n_train, pfa):
    """Cell-averaging multiplier for exponential clutter.

    A cell is declared a target when it exceeds ``alpha * ring_mean`` with
    ``alpha = n * (pfa ** (-1/n) - 1)``. Accepts arrays for ``n_train``.
    """
    n = np.asarray(n_train, dtype=np.float64)
    if np.any(n < 1):
        raise ValidationError("n_train must be >= 1")
    if not 0 < pfa <= 1:
        raise ValidationError(f"pfa must lie in (0, 1], got {pfa}")
    alpha = n * np.expm1(-np.log(pfa) / n)
    return float(alpha) if alpha.ndim == 0 else alpha


def _box_sums(integral: np.ndarray, radius: int, rows: int, cols: int) -> np.ndarray:
    """Sum over the (2r+1)^2 window around every pixel, clipped to the image."""
    r = np.arange(rows)
    c = np.arange(cols)
    r0 = np.clip(r - radius, 0, rows)[:, None]
    r1 = np.clip(r + radius + 1, 0, rows)[:, None]
    c0 = np.clip(c - radius, 0, cols)[None, :]
    c1 = np.clip(c + radius + 1, 0, cols)[None, :]
    return integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]


def _integral(x: np.ndarray) -> np.ndarray:
    out = np.zeros((x.shape[0] + 1, x.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(x, axis=0), axis=1, out=out[1:, 1:])
    return out


def ring_statistics(band: np.ndarray, guard_radius: int, train_radius: int):
    """Per-pixel training-ring cell count, mean and standard deviation."""
    x = np.asarray(band, dtype=np.float64)
    rows, cols = x.shape
    # centring on the median keeps the sums small and makes a constant band exact
    ref = float(np.median(x))
    d = x - ref
    ones = _integral(np.ones_like(d))
    s1 = _integral(d)
    s2 = _integral(d * d)

    def ring(integral):
        return _box_sums(integral, train_radius, rows, cols) - _box_sums(integral, guard_radius, rows, cols)

    n = np.rint(ring(ones))
    mean_d = ring(s1) / n
    var = np.maximum(ring(s2) / n - mean_d**2, 0.0)
    return n, ref + mean_d, np.sqrt(var)


def cluster_detections(mask: np.ndarray) -> list[BoundingBox]:
    """Tight boxes of 8-connected components, sorted by top-left corner."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    boxes = [
        BoundingBox(sl[0].start, sl[1].start, sl[0].stop - sl[0].start, sl[1].stop - sl[1].start)
        for sl in ndimage.find_objects(labels)
        if sl is not None
    ]
    return sorted(boxes, key=lambda b: (b.row, b.col))


def cfar_mask(band: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    cfg.validate()
    x = np.asarray(band, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"CFAR expects a 2-D band, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("CFAR input band must be finite")
    if np.any(x < 0):
        raise ValidationError("CFAR input band must be non-negative")
    side = 2 * cfg.train_radius + 1
    if x.shape[0] < side or x.shape[1] < side:
        raise ConfigError(f"band {x.shape[0]}x{x.shape[1]} is smaller than the {side}x{side} CFAR window")

    n, mean, std = ring_statistics(x, cfg.guard_radius, cfg.train_radius)
    if cfg.variant == "ca":
        return x > ca_threshold_factor(n, cfg.pfa) * mean
    return x > mean + cfg.two_param_k * std


def cfar_detect(band: np.ndarray, cfg: CfarConfig | None = None) -> CfarResult:
    cfg = cfg or CfarConfig()
    mask = cfar_mask(band, cfg)
    return CfarResult(mask, cluster_detections(mask))
