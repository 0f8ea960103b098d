"""Scene-level vessel detection: propose, localise, score with the CNN, suppress.

The chain mirrors a single-scale SSD head. Candidate windows come from
CFAR hits (or a dense grid). Each window is tightened to the bright
object inside it. The CNN scores a chip centred on that object, and
greedy non-maximum suppression removes overlapping duplicates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import ndimage

from .cfar import CfarConfig, cfar_detect, cfar_mask
from .cnn import Network, predict_proba
from .errors import ConfigError, SceneTooSmallError, ValidationError
from .scene_io import BoundingBox, SarScene, chip_window, extract_chip
from .wavelet import DenoiseConfig, denoise

Source = Literal["cfar", "dense"]


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    source: Source = "cfar"

    def to_dict(self) -> dict:
        return dict(self.box.to_dict(), score=float(self.score), source=self.source)

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        try:
            box = BoundingBox(int(d["row"]), int(d["col"]), int(d["height"]), int(d["width"]))
            return cls(box, float(d["score"]), d.get("source", "cfar"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed detection {d!r}") from exc


@dataclass(frozen=True)
class DetectConfig:
    proposal_mode: Source = "cfar"
    cfar: CfarConfig = field(default_factory=lambda: CfarConfig(pfa=1e-2))
    window_stride: int = 16
    chip_size: int = 32
    score_threshold: float = 0.5
    nms_iou: float = 0.3
    denoise: Optional[DenoiseConfig] = field(default_factory=DenoiseConfig)
    localize: bool = True

    def validate(self) -> None:
        if self.proposal_mode not in ("cfar", "dense"):
            raise ConfigError(f"unknown proposal mode {self.proposal_mode!r}")
        if self.chip_size < 1:
            raise ConfigError("chip_size must be >= 1")
        if not 1 <= self.window_stride <= self.chip_size:
            raise ConfigError("window_stride must lie in [1, chip_size]")
        if not 0 <= self.nms_iou <= 1:
            raise ConfigError("nms_iou must lie in [0, 1]")
        if not math.isfinite(self.score_threshold):
            raise ConfigError("score_threshold must be finite")
        if self.proposal_mode == "cfar":
            self.cfar.validate()
        if self.denoise is not None:
            self.denoise.validate()


@dataclass
class DetectionRun:
    detections: list[Detection]
    detection_time_ms: float
    n_proposals: int


def iou(a: BoundingBox, b: BoundingBox) -> float:
    dh = min(a.bottom, b.bottom) - max(a.row, b.row)
    dw = min(a.right, b.right) - max(a.col, b.col)
    if dh <= 0 or dw <= 0:
        return 0.0
    inter = dh * dw
    return inter / (a.area + b.area - inter)


def denoise_scene(scene: SarScene, cfg: Optional[DenoiseConfig]) -> SarScene:
    """Denoise every band independently; ``cfg=None`` returns the scene as is."""
    if cfg is None:
        return scene
    return scene.with_pixels(np.stack([denoise(band, cfg) for band in scene.pixels]).astype(np.float32))


def _dedupe(boxes):
    seen = set()
    out = []
    for b in boxes:
        if b not in seen:
            seen.add(b)
            out.append(b)
    return out


def _grid_starts(n: int, size: int, stride: int) -> list[int]:
    starts = list(range(0, n - size + 1, stride))
    if starts[-1] != n - size:
        starts.append(n - size)
    return starts


def propose(scene: SarScene, cfg: DetectConfig | None = None) -> list[BoundingBox]:
    """Candidate ``chip_size`` windows, in scan order, without duplicates."""
    cfg = cfg or DetectConfig()
    cfg.validate()
    size = cfg.chip_size
    if size > scene.rows or size > scene.cols:
        raise SceneTooSmallError(f"chip size {size} exceeds scene {scene.rows}x{scene.cols}")
    scene = denoise_scene(scene, cfg.denoise)

    if cfg.proposal_mode == "dense":
        return [
            BoundingBox(r, c, size, size)
            for r in _grid_starts(scene.rows, size, cfg.window_stride)
            for c in _grid_starts(scene.cols, size, cfg.window_stride)
        ]

    mask = cfar_mask(scene.band("VV"), cfg.cfar)
    if not mask.any():
        return []
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    centroids = ndimage.center_of_mass(mask, labels, range(1, n + 1))
    slices = ndimage.find_objects(labels)
    # scan order of the cluster boxes
    order = sorted(range(n), key=lambda k: (slices[k][0].start, slices[k][1].start))
    windows = []
    for k in order:
        cr, cc = centroids[k]
        r0, c0 = chip_window(scene.rows, scene.cols, (int(round(cr)), int(round(cc))), size)
        windows.append(BoundingBox(r0, c0, size, size))
    return _dedupe(windows)


def localize(band: np.ndarray, window: BoundingBox) -> BoundingBox:
    """Tighten a candidate window to the bright object near its centre.

    The peak is searched in the central half of the window; the object is
    the 8-connected region around the peak brighter than the geometric mean
    of peak and window median (half-way in dB).
    """
    patch = np.asarray(band[window.row:window.bottom, window.col:window.right], dtype=np.float64)
    qh, qw = window.height // 4, window.width // 4
    core = patch[qh:window.height - qh, qw:window.width - qw]
    pr, pc = np.unravel_index(int(np.argmax(core)), core.shape)
    pr, pc = pr + qh, pc + qw
    peak = patch[pr, pc]
    background = float(np.median(patch))
    level = math.sqrt(max(background, 0.0) * peak)
    labels, _ = ndimage.label(patch >= level, structure=np.ones((3, 3), dtype=int))
    rows, cols = np.nonzero(labels == labels[pr, pc])
    return BoundingBox(
        window.row + int(rows.min()),
        window.col + int(cols.min()),
        int(rows.max() - rows.min()) + 1,
        int(cols.max() - cols.min()) + 1,
    )


def score(net: Network, scene: SarScene, boxes: Sequence[BoundingBox], source: Source = "cfar") -> list[Detection]:
    """Vessel probability of a chip centred on each box, order preserved."""
    if not boxes:
        return []
    size, _, n_bands = net.input_shape
    if n_bands != len(scene.bands):
        raise ValidationError(f"network expects {n_bands} bands, scene has {len(scene.bands)}")
    raw = np.stack([extract_chip(scene, b.center, size).data for b in boxes])
    probs = predict_proba(net, raw)
    return [Detection(b, float(p), source) for b, p in zip(boxes, probs[:, 1])]


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy suppression; ties in score resolve by top-left corner."""
    pending = sorted(dets, key=lambda d: (-d.score, d.box.row, d.box.col))
    kept: list[Detection] = []
    for det in pending:
        if all(iou(det.box, k.box) <= iou_threshold for k in kept):
            kept.append(det)
    return kept


def run_detection(scene: SarScene, net: Network, cfg: DetectConfig | None = None) -> DetectionRun:
    cfg = cfg or DetectConfig()
    cfg.validate()
    t0 = time.perf_counter()
    work = denoise_scene(scene, cfg.denoise)
    windows = propose(work, replace(cfg, denoise=None))
    if cfg.localize:
        vv = work.band("VV")
        boxes = _dedupe(localize(vv, w) for w in windows)
    else:
        boxes = windows
    dets = score(net, work, boxes, cfg.proposal_mode)
    dets = nms([d for d in dets if d.score >= cfg.score_threshold], cfg.nms_iou)
    elapsed = (time.perf_counter() - t0) * 1000.0
    return DetectionRun(dets, elapsed, len(boxes))


def detect(scene: SarScene, net: Network, cfg: DetectConfig | None = None) -> tuple[list[Detection], float]:
    """Full chain; returns the detections and the wall time in milliseconds."""
    run = run_detection(scene, net, cfg)
    return run.detections, run.detection_time_ms


def cfar_baseline(scene: SarScene, cfg: CfarConfig | None = None) -> list[Detection]:
    """Threshold-only detector: raw VV band, CFAR clusters with score 1."""
    result = cfar_detect(scene.band("VV"), cfg or CfarConfig(pfa=1e-2))
    return [Detection(b, 1.0, "cfar") for b in result.boxes]
