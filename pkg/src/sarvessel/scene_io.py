"""Dual-polarisation SAR scene model, raster I/O, chips and synthetic scenes.

On-disk layout for a scene stored under ``stem``::

    <stem>.json        header: scene_id, rows, cols, bands, dtype="f32le"
                       and optionally pixel_spacing_m
    <stem>.f32         raw float32 little-endian, band-sequential, row-major
    <stem>.truth.json  optional list of {row, col, height, width, class}

Pixels are linear-power backscatter intensities.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    FormatError,
    MissingFileError,
    NonFiniteError,
    PlacementError,
    SceneIOError,
    SceneTooSmallError,
    SizeMismatchError,
    UnknownBandError,
    ValidationError,
)

BAND_LABELS = ("VV", "VH")
VESSEL = "vessel"
SEA = "sea"
DTYPE_TAG = "f32le"
PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Axis-aligned pixel box, top-left anchored, half-open extent."""

    row: int
    col: int
    height: int
    width: int

    def __post_init__(self):
        if self.row < 0 or self.col < 0:
            raise ValidationError(f"box origin must be non-negative, got ({self.row}, {self.col})")
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"box extent must be >= 1, got {self.height}x{self.width}")

    @property
    def bottom(self) -> int:
        return self.row + self.height

    @property
    def right(self) -> int:
        return self.col + self.width

    @property
    def area(self) -> int:
        return self.height * self.width

    @property
    def center(self) -> tuple[int, int]:
        return self.row + self.height // 2, self.col + self.width // 2

    def fits(self, rows: int, cols: int) -> bool:
        return self.bottom <= rows and self.right <= cols

    def to_dict(self) -> dict:
        return {"row": self.row, "col": self.col, "height": self.height, "width": self.width}


@dataclass(frozen=True)
class GroundTruth:
    """Annotated targets of one scene as ``(box, class_label)`` pairs."""

    boxes: tuple[tuple[BoundingBox, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for _, label in self.boxes:
            if label != VESSEL:
                raise ValidationError(f"unknown ground-truth class {label!r}")

    def __len__(self):
        return len(self.boxes)

    @property
    def vessel_boxes(self) -> list[BoundingBox]:
        return [b for b, _ in self.boxes]

    def validate_against(self, scene: "SarScene") -> None:
        for box, _ in self.boxes:
            if not box.fits(scene.rows, scene.cols):
                raise ValidationError(f"truth box {box} exceeds scene {scene.rows}x{scene.cols}")


@dataclass(frozen=True, eq=False)
class SarScene:
    """Dual-band raster of linear backscatter.

    ``pixels`` has shape ``(n_bands, rows, cols)`` and dtype float32; the
    array is made read-only on construction.
    """

    scene_id: str
    bands: tuple[str, ...]
    pixels: np.ndarray
    pixel_spacing_m: Optional[float] = None

    def __post_init__(self):
        bands = tuple(self.bands)
        object.__setattr__(self, "bands", bands)
        if not bands:
            raise ValidationError("a scene needs at least one band")
        unknown = [b for b in bands if b not in BAND_LABELS]
        if unknown:
            raise UnknownBandError(f"unknown band label(s) {unknown}; expected {BAND_LABELS}")
        if len(set(bands)) != len(bands):
            raise ValidationError(f"duplicate band labels in {bands}")

        pixels = np.asarray(self.pixels)
        if pixels.ndim == 2:
            pixels = pixels[None]
        if pixels.ndim != 3 or pixels.shape[0] != len(bands):
            raise ValidationError(
                f"pixels must have shape (bands, rows, cols) with {len(bands)} bands, got {pixels.shape}"
            )
        if pixels.shape[1] < 1 or pixels.shape[2] < 1:
            raise ValidationError(f"rows and cols must be positive, got {pixels.shape[1:]}")
        pixels = np.array(pixels, dtype=np.float32, copy=True)
        if not np.all(np.isfinite(pixels)):
            raise NonFiniteError("scene pixels must be finite")
        if np.any(pixels < 0):
            raise ValidationError("scene pixels must be >= 0 (linear power)")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

        if self.pixel_spacing_m is not None and not (self.pixel_spacing_m > 0 and math.isfinite(self.pixel_spacing_m)):
            raise ValidationError(f"pixel_spacing_m must be positive, got {self.pixel_spacing_m}")

    @property
    def rows(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def cols(self) -> int:
        return int(self.pixels.shape[2])

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def band(self, label: str) -> np.ndarray:
        try:
            return self.pixels[self.bands.index(label)]
        except ValueError:
            raise UnknownBandError(f"scene {self.scene_id!r} has no band {label!r}") from None

    def with_pixels(self, pixels: np.ndarray) -> "SarScene":
        return SarScene(self.scene_id, self.bands, pixels, self.pixel_spacing_m)

    def __eq__(self, other):
        if not isinstance(other, SarScene):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.bands == other.bands
            and self.pixel_spacing_m == other.pixel_spacing_m
            and self.pixels.shape == other.pixels.shape
            and self.pixels.tobytes() == other.pixels.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Chip:
    """Square ``size x size x n_bands`` patch cut from a scene."""

    data: np.ndarray
    label: Optional[str] = None
    origin: tuple[str, int, int] = ("", 0, 0)

    def __post_init__(self):
        if self.label not in (None, VESSEL, SEA):
            raise ValidationError(f"chip label must be 'vessel', 'sea' or None, got {self.label!r}")
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[0] != data.shape[1]:
            raise ValidationError(f"chip data must be size x size x bands, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("chip data must be finite")
        object.__setattr__(self, "data", data)

    @property
    def size(self) -> int:
        return int(self.data.shape[0])


@dataclass(frozen=True)
class SynthParams:
    rows: int = 512
    cols: int = 512
    clutter_mean_vv: float = 1.0
    looks: int = 4
    band_ratio_vh: float = 0.25
    n_vessels: int = 5
    vessel_size_range: tuple[int, int] = (4, 12)
    tcr_db_range: tuple[float, float] = (10.0, 20.0)
    seed: int = 0
    scene_id: str = ""

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"rows/cols must be positive, got {self.rows}x{self.cols}")
        if not self.clutter_mean_vv > 0:
            raise ConfigError("clutter_mean_vv must be positive")
        if self.looks < 1:
            raise ConfigError("looks must be a positive integer")
        if not 0 < self.band_ratio_vh <= 1:
            raise ConfigError("band_ratio_vh must lie in (0, 1]")
        if self.n_vessels < 0:
            raise ConfigError("n_vessels must be >= 0")
        lo, hi = self.vessel_size_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"vessel_size_range must satisfy 1 <= min <= max, got {self.vessel_size_range}")
        tlo, thi = self.tcr_db_range
        if not 0 < tlo <= thi:
            raise ConfigError(f"tcr_db_range must satisfy 0 < min <= max, got {self.tcr_db_range}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


# --------------------------------------------------------------------------
# file I/O


def _paths(stem) -> tuple[Path, Path, Path]:
    stem = str(stem)
    return Path(stem + ".json"), Path(stem + ".f32"), Path(stem + ".truth.json")


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise SceneIOError(f"cannot write file: {exc.strerror or exc}", path) from exc


def atomic_write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2) + "\n").encode("utf-8"))


def truth_to_json(truth: GroundTruth) -> list[dict]:
    return [dict(box.to_dict(), **{"class": label}) for box, label in truth.boxes]


def truth_from_json(items) -> GroundTruth:
    if not isinstance(items, list):
        raise FormatError("truth file must hold a JSON array")
    boxes = []
    for item in items:
        try:
            box = BoundingBox(int(item["row"]), int(item["col"]), int(item["height"]), int(item["width"]))
            label = item.get("class", VESSEL)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed truth entry {item!r}") from exc
        boxes.append((box, label))
    return GroundTruth(tuple(boxes))


def save_scene(scene: SarScene, truth: Optional[GroundTruth], path_stem) -> None:
    """Write header, raw pixels and (optionally) ground truth next to ``path_stem``."""
    if truth is not None:
        truth.validate_against(scene)
    header_path, raw_path, truth_path = _paths(path_stem)
    header = {
        "scene_id": scene.scene_id,
        "rows": scene.rows,
        "cols": scene.cols,
        "bands": list(scene.bands),
        "dtype": DTYPE_TAG,
    }
    if scene.pixel_spacing_m is not None:
        header["pixel_spacing_m"] = scene.pixel_spacing_m
    atomic_write_bytes(raw_path, scene.pixels.astype("<f4").tobytes(order="C"))
    atomic_write_json(header_path, header)
    if truth is not None:
        atomic_write_json(truth_path, truth_to_json(truth))


def _read_json(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise MissingFileError("file not found", path) from exc
    except OSError as exc:
        raise SceneIOError(f"cannot read file: {exc.strerror or exc}", path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from exc


def load_scene(path_stem) -> tuple[SarScene, Optional[GroundTruth]]:
    """Read a scene written by :func:`save_scene`.

    The truth element is ``None`` when no ``<stem>.truth.json`` exists.
    """
    header_path, raw_path, truth_path = _paths(path_stem)
    header = _read_json(header_path)
    if not isinstance(header, dict):
        raise FormatError(f"{header_path}: header must be a JSON object")
    try:
        rows, cols = int(header["rows"]), int(header["cols"])
        bands = [str(b) for b in header["bands"]]
        scene_id = str(header["scene_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{header_path}: missing or malformed header field ({exc})") from exc
    if header.get("dtype", DTYPE_TAG) != DTYPE_TAG:
        raise FormatError(f"{header_path}: unsupported dtype {header.get('dtype')!r}")
    unknown = [b for b in bands if b not in BAND_LABELS]
    if unknown:
        raise UnknownBandError(f"{header_path}: unknown band label(s) {unknown}")
    if rows < 1 or cols < 1 or not bands:
        raise FormatError(f"{header_path}: rows, cols and bands must be non-empty")

    try:
        raw = raw_path.read_bytes()
    except FileNotFoundError as exc:
        raise MissingFileError("raw pixel file not found", raw_path) from exc
    except OSError as exc:
        raise SceneIOError(f"cannot read file: {exc.strerror or exc}", raw_path) from exc
    expected = len(bands) * rows * cols * 4
    if len(raw) != expected:
        raise SizeMismatchError(
            f"{raw_path}: header declares {len(bands)}x{rows}x{cols} float32 ({expected} bytes), file has {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype="<f4").reshape(len(bands), rows, cols).astype(np.float32)
    if not np.all(np.isfinite(pixels)):
        raise NonFiniteError(f"{raw_path}: non-finite pixel values")

    spacing = header.get("pixel_spacing_m")
    scene = SarScene(scene_id, tuple(bands), pixels, None if spacing is None else float(spacing))

    truth = None
    if truth_path.exists():
        truth = truth_from_json(_read_json(truth_path))
        truth.validate_against(scene)
    return scene, truth


# --------------------------------------------------------------------------
# chips


def chip_window(rows: int, cols: int, center: tuple[int, int], size: int) -> tuple[int, int]:
    """Top-left of the ``size`` window centred on ``center``, shifted inside the scene."""
    if size < 1:
        raise ConfigError(f"chip size must be >= 1, got {size}")
    if size > rows or size > cols:
        raise SceneTooSmallError(f"chip size {size} exceeds scene {rows}x{cols}")
    r0 = min(max(int(center[0]) - size // 2, 0), rows - size)
    c0 = min(max(int(center[1]) - size // 2, 0), cols - size)
    return r0, c0


def extract_chip(scene: SarScene, center: tuple[int, int], size: int = 32, label: Optional[str] = None) -> Chip:
    r0, c0 = chip_window(scene.rows, scene.cols, center, size)
    data = np.transpose(scene.pixels[:, r0:r0 + size, c0:c0 + size], (1, 2, 0))
    return Chip(np.ascontiguousarray(data), label, (scene.scene_id, r0, c0))


# --------------------------------------------------------------------------
# synthetic scenes


def _overlaps(box: BoundingBox, others: Sequence[BoundingBox]) -> bool:
    for o in others:
        if box.row < o.bottom and o.row < box.bottom and box.col < o.right and o.col < box.right:
            return True
    return False


def synth_scene(params: SynthParams) -> tuple[SarScene, GroundTruth]:
    """Gamma-speckle sea clutter with multiplicative rectangular vessels.

    Clutter intensity in each band is Gamma(looks, mean / looks); every
    vessel rectangle multiplies both bands by the same linear TCR factor.
    The numpy PCG64 stream is seeded from ``params.seed`` so the output is
    a pure function of ``params``.
    """
    params.validate()
    rng = np.random.Generator(np.random.PCG64(params.seed))
    lo, hi = params.vessel_size_range
    if lo > params.rows or lo > params.cols:
        raise PlacementError(f"vessel size {lo} does not fit a {params.rows}x{params.cols} scene")

    means = {"VV": params.clutter_mean_vv, "VH": params.band_ratio_vh * params.clutter_mean_vv}
    bands = ("VV", "VH")
    shape = (params.rows, params.cols)
    clutter = np.stack([rng.gamma(params.looks, means[b] / params.looks, size=shape) for b in bands])

    placed: list[BoundingBox] = []
    for _ in range(params.n_vessels):
        for _attempt in range(PLACEMENT_ATTEMPTS):
            h = int(rng.integers(lo, min(hi, params.rows) + 1))
            w = int(rng.integers(lo, min(hi, params.cols) + 1))
            r = int(rng.integers(0, params.rows - h + 1))
            c = int(rng.integers(0, params.cols - w + 1))
            box = BoundingBox(r, c, h, w)
            if not _overlaps(box, placed):
                break
        else:
            raise PlacementError(
                f"could not place vessel {len(placed) + 1} of {params.n_vessels} "
                f"after {PLACEMENT_ATTEMPTS} attempts"
            )
        placed.append(box)
        tcr_db = rng.uniform(*params.tcr_db_range)
        clutter[:, box.row:box.bottom, box.col:box.right] *= 10.0 ** (tcr_db / 10.0)

    scene_id = params.scene_id or f"synth-{params.seed}"
    # float32 rounding must not produce exact zeros
    pixels = np.maximum(clutter.astype(np.float32), np.finfo(np.float32).tiny)
    scene = SarScene(scene_id, bands, pixels)
    return scene, GroundTruth(tuple((b, VESSEL) for b in placed))
