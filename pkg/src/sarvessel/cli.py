"""Command-line entry point: ``sarvessel <subcommand> [options]``.

Every subcommand accepts ``--config`` (a JSON RunConfig), ``--seed`` and
``--out``. Flags override values from the config file. Results are written
atomically; a short JSON summary goes to stdout. Exit codes: 0 on success,
2 for invalid input or configuration, 3 for file-system errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .bench import BenchConfig, SceneSet, chip_split, per_chip_latency_ms, run_bench, train_seed
from .cfar import CfarConfig, cfar_detect
from .cnn import TrainConfig, classify, default_network, load_weights, save_weights, train
from .detector import Detection, DetectConfig, denoise_scene, run_detection
from .errors import ConfigError, FormatError, MissingFileError, SceneIOError, ValidationError
from .evaluation import chip_confusion, match_box_detections, metrics
from .scene_io import (
    BoundingBox,
    SynthParams,
    atomic_write_bytes,
    atomic_write_json,
    load_scene,
    save_scene,
    synth_scene,
    truth_from_json,
)
from .wavelet import DenoiseConfig

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


@dataclass(frozen=True)
class DatasetConfig:
    chip_size: int = 32
    n_chips: Optional[int] = None
    train_fraction: float = 0.75


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "chip"
    iou_min: float = 0.5


@dataclass(frozen=True)
class PathsConfig:
    scene: Optional[str] = None
    scenes: Optional[list] = None
    weights: Optional[str] = None
    detections: Optional[str] = None
    truth: Optional[str] = None
    history: Optional[str] = None
    overlay: Optional[str] = None
    mask: Optional[str] = None
    out: Optional[str] = None


# nested dataclass fields, by owner type
_NESTED = {
    DetectConfig: {"cfar": CfarConfig, "denoise": DenoiseConfig},
    SceneSet: {},
    BenchConfig: {
        "scenes": SceneSet,
        "heldout": SceneSet,
        "train": TrainConfig,
        "denoise": DenoiseConfig,
        "detect": DetectConfig,
    },
}

SECTIONS = {
    "synth": SynthParams,
    "denoise": DenoiseConfig,
    "cfar": CfarConfig,
    "train": TrainConfig,
    "detect": DetectConfig,
    "dataset": DatasetConfig,
    "eval": EvalConfig,
    "bench": BenchConfig,
    "paths": PathsConfig,
}


def _default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def _coerce(value, default, where: str):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = (
            isinstance(value, (list, tuple))
            and len(value) == len(default)
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        )
        value = tuple(value) if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected a value like {default!r}, got {value!r}")
    return value


def from_dict(cls, data: Any, where: str):
    """Build dataclass ``cls`` from a JSON object; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    nested = _NESTED.get(cls, {})
    kwargs = {}
    for name, value in data.items():
        sub = f"{where}.{name}"
        if name in nested:
            kwargs[name] = None if value is None else from_dict(nested[name], value, sub)
        else:
            kwargs[name] = _coerce(value, _default(known[name]), sub)
    return cls(**kwargs)


@dataclass
class RunConfig:
    seed: int = 0
    sections: dict = field(default_factory=dict)

    def section(self, name: str):
        return self.sections.get(name) or SECTIONS[name]()

    def has(self, name: str) -> bool:
        return name in self.sections


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise MissingFileError("config file not found", path) from exc
    except OSError as exc:
        raise SceneIOError(f"cannot read config file: {exc.strerror or exc}", path) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown config section(s) {', '.join(unknown)}")
    seed = _coerce(data.get("seed", 0), 0, "seed")
    sections = {}
    for name, cls in SECTIONS.items():
        if name in data:
            sections[name] = None if data[name] is None and name == "denoise" else from_dict(cls, data[name], name)
    return RunConfig(seed=seed, sections=sections)


def _override(obj, **values):
    values = {k: v for k, v in values.items() if v is not None}
    return replace(obj, **values) if values else obj


def _check_seed(seed: int) -> int:
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _need(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def _denoise_cfg(args, run: RunConfig) -> Optional[DenoiseConfig]:
    if getattr(args, "no_denoise", False):
        return None
    if run.has("denoise"):
        return run.sections["denoise"]
    return DenoiseConfig()


# --------------------------------------------------------------------------
# PGM output


def pgm_bytes(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.uint8)
    rows, cols = image.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + image.tobytes()


def to_gray(band: np.ndarray) -> np.ndarray:
    """Linear min/max rescale to 0..255."""
    band = np.asarray(band, dtype=np.float64)
    lo, hi = float(band.min()), float(band.max())
    if hi <= lo:
        return np.zeros(band.shape, dtype=np.uint8)
    return np.floor((band - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)


def burn_outline(image: np.ndarray, box: BoundingBox, value: int = 255) -> None:
    r0, c0 = box.row, box.col
    r1, c1 = min(box.bottom, image.shape[0]) - 1, min(box.right, image.shape[1]) - 1
    image[r0, c0:c1 + 1] = value
    image[r1, c0:c1 + 1] = value
    image[r0:r1 + 1, c0] = value
    image[r0:r1 + 1, c1] = value


# --------------------------------------------------------------------------
# detections files


def detections_payload(dets, detection_time_ms: float, n_proposals: Optional[int]) -> dict:
    return {
        "detections": [d.to_dict() for d in dets],
        "detection_time_ms": float(detection_time_ms),
        "n_proposals": n_proposals,
    }


def read_detections(path) -> tuple[list[Detection], float, Optional[int]]:
    """Accept the payload object written by ``detect``/``cfar`` or a bare array."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise MissingFileError("detections file not found", path) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"detections file is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise SceneIOError(f"cannot read detections file: {exc.strerror or exc}", path) from exc
    if isinstance(data, list):
        items, ms, n_prop = data, 0.0, None
    elif isinstance(data, dict) and isinstance(data.get("detections"), list):
        items, ms, n_prop = data["detections"], float(data.get("detection_time_ms", 0.0)), data.get("n_proposals")
    else:
        raise FormatError(f"{path}: expected a detections array or object")
    if not all(isinstance(d, dict) for d in items):
        raise FormatError(f"{path}: every detection must be a JSON object")
    return [Detection.from_dict(d) for d in items], ms, n_prop


def read_truth(ref):
    """``ref`` is a scene stem (``<ref>.truth.json``) or a truth JSON path."""
    path = Path(str(ref) + ".truth.json")
    if not path.exists():
        path = Path(ref)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise MissingFileError("truth file not found", path) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"truth file is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise SceneIOError(f"cannot read truth file: {exc.strerror or exc}", path) from exc
    return truth_from_json(data)


def _load_scenes(stems):
    out = []
    for stem in stems:
        scene, truth = load_scene(stem)
        if truth is None:
            raise ValidationError(f"scene {stem!r} has no truth file")
        out.append((scene, truth))
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, run: RunConfig) -> None:
    params = run.section("synth")
    size_range = tuple(params.vessel_size_range)
    tcr_range = tuple(params.tcr_db_range)
    params = _override(
        params,
        rows=args.rows,
        cols=args.cols,
        looks=args.looks,
        clutter_mean_vv=args.clutter_mean,
        band_ratio_vh=args.band_ratio,
        n_vessels=args.vessels,
        vessel_size_range=(
            args.size_min if args.size_min is not None else size_range[0],
            args.size_max if args.size_max is not None else size_range[1],
        ),
        tcr_db_range=(
            args.tcr_min if args.tcr_min is not None else tcr_range[0],
            args.tcr_max if args.tcr_max is not None else tcr_range[1],
        ),
        scene_id=args.scene_id,
        seed=run.seed,
    )
    out = _need(args.out, "--out")
    if not params.scene_id:
        params = replace(params, scene_id=Path(out).name)
    scene, truth = synth_scene(params)
    save_scene(scene, truth, out)
    _emit({
        "scene_id": scene.scene_id,
        "rows": scene.rows,
        "cols": scene.cols,
        "bands": {
            label: {"mean": float(scene.band(label).mean()), "max": float(scene.band(label).max())}
            for label in scene.bands
        },
        "vessels": len(truth.vessel_boxes),
        "out": str(out),
    })


def cmd_denoise(args, run: RunConfig) -> None:
    cfg = _override(run.sections.get("denoise") or DenoiseConfig(), family=args.family, levels=args.levels, rule=args.rule)
    if args.linear:
        cfg = replace(cfg, log_domain=False)
    scene, truth = load_scene(_need(args.scene, "--scene"))
    cleaned = denoise_scene(scene, cfg)
    out = _need(args.out, "--out")
    save_scene(cleaned, truth, out)
    _emit({
        "scene_id": scene.scene_id,
        "config": asdict(cfg),
        "bands": {
            label: {"mean_in": float(scene.band(label).mean()), "mean_out": float(cleaned.band(label).mean())}
            for label in scene.bands
        },
        "out": str(out),
    })


def cmd_cfar(args, run: RunConfig) -> None:
    cfg = _override(
        run.section("cfar"),
        guard_radius=args.guard,
        train_radius=args.train,
        pfa=args.pfa,
        variant=args.variant,
        two_param_k=args.k,
    )
    scene, _ = load_scene(_need(args.scene, "--scene"))
    result = cfar_detect(scene.band(args.band), cfg)
    dets = [Detection(b, 1.0, "cfar") for b in result.boxes]
    if args.out is not None:
        atomic_write_json(args.out, detections_payload(dets, 0.0, None))
    if args.mask is not None:
        atomic_write_bytes(args.mask, pgm_bytes(result.mask.astype(np.uint8) * 255))
    _emit({
        "band": args.band,
        "flagged_cells": int(result.mask.sum()),
        "clusters": len(result.boxes),
        "config": asdict(cfg),
    })


def cmd_train(args, run: RunConfig) -> None:
    paths = run.section("paths")
    stems = args.scenes or paths.scenes
    if not stems:
        raise ConfigError("no training scenes given (--scenes)")
    ds = _override(run.section("dataset"), chip_size=args.chip_size, n_chips=args.n_chips,
                   train_fraction=args.train_fraction)
    cfg = _override(
        run.section("train"),
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        init_weights_path=args.init_weights,
    )
    cfg.validate()
    out = _need(args.out or paths.weights, "--out")
    scenes = _load_scenes(stems)
    train_chips, val_chips = chip_split(
        scenes, ds.chip_size, ds.n_chips, ds.train_fraction, run.seed, _denoise_cfg(args, run)
    )
    net = default_network(ds.chip_size, train_chips[0].data.shape[2])
    net, history = train(net, train_chips, val_chips, replace(cfg, seed=train_seed(run.seed)))
    save_weights(net, out)
    hist_path = args.history or paths.history or str(out) + ".history.json"
    payload = history.to_dict()
    payload.update({"seed": run.seed, "train_chips": len(train_chips), "val_chips": len(val_chips)})
    atomic_write_json(hist_path, payload)
    _emit({
        "weights": str(out),
        "history": str(hist_path),
        "epochs": len(history.train_loss),
        "final_train_loss": history.train_loss[-1],
        "final_val_accuracy": history.val_accuracy[-1],
        "training_time_ms": history.wall_time_ms,
    })


def _detect_cfg(args, run: RunConfig, chip_size: int) -> DetectConfig:
    cfg = run.section("detect")
    cfar = _override(cfg.cfar, pfa=args.pfa, guard_radius=args.guard, train_radius=args.train)
    cfg = _override(
        cfg,
        proposal_mode=args.mode,
        window_stride=args.stride,
        score_threshold=args.score_threshold,
        nms_iou=args.nms_iou,
    )
    # the chip size is fixed by the network
    cfg = replace(cfg, cfar=cfar, chip_size=chip_size, window_stride=min(cfg.window_stride, chip_size))
    # a top-level denoise section applies to training and detection alike
    if run.has("denoise"):
        cfg = replace(cfg, denoise=run.sections["denoise"])
    if args.no_denoise:
        cfg = replace(cfg, denoise=None)
    if args.no_localize:
        cfg = replace(cfg, localize=False)
    return cfg


def cmd_detect(args, run: RunConfig) -> None:
    paths = run.section("paths")
    scene, _ = load_scene(_need(args.scene or paths.scene, "--scene"))
    net = load_weights(_need(args.weights or paths.weights, "--weights"))
    cfg = _detect_cfg(args, run, net.input_shape[0])
    result = run_detection(scene, net, cfg)
    out = args.out or paths.out
    if out is not None:
        atomic_write_json(out, detections_payload(result.detections, result.detection_time_ms, result.n_proposals))
    overlay = args.overlay or paths.overlay
    if overlay is not None:
        image = to_gray(scene.band("VV"))
        for det in result.detections:
            burn_outline(image, det.box)
        atomic_write_bytes(overlay, pgm_bytes(image))
    _emit({
        "scene_id": scene.scene_id,
        "detections": len(result.detections),
        "n_proposals": result.n_proposals,
        "detection_time_ms": result.detection_time_ms,
    })


def cmd_eval(args, run: RunConfig) -> None:
    paths = run.section("paths")
    ecfg = _override(run.section("eval"), mode=args.mode, iou_min=args.iou_min)
    if ecfg.mode not in ("chip", "box"):
        raise ConfigError(f"unknown eval mode {ecfg.mode!r}")
    training_ms = 0.0
    history = args.history or paths.history
    if history is not None:
        try:
            training_ms = float(json.loads(Path(history).read_text(encoding="utf-8"))["training_time_ms"])
        except FileNotFoundError as exc:
            raise MissingFileError("history file not found", history) from exc
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{history}: not a training history") from exc

    if ecfg.mode == "box":
        if args.scenes or paths.scenes:
            raise ConfigError("box mode takes --detections and --truth, not --scenes")
        dets, det_ms, n_prop = read_detections(_need(args.detections or paths.detections, "--detections"))
        truth = read_truth(_need(args.truth or paths.truth, "--truth"))
        counts = match_box_detections(dets, truth, ecfg.iou_min, n_prop)
        report = metrics(counts, "box", training_ms, det_ms)
    else:
        if args.detections or args.truth:
            raise ConfigError("chip mode takes --scenes and --weights, not detections or truth files")
        stems = args.scenes or paths.scenes
        if not stems:
            raise ConfigError("chip mode needs --scenes")
        net = load_weights(_need(args.weights or paths.weights, "--weights"))
        ds = _override(run.section("dataset"), chip_size=args.chip_size, n_chips=args.n_chips,
                       train_fraction=args.train_fraction)
        if ds.chip_size != net.input_shape[0]:
            raise ConfigError(f"chip_size {ds.chip_size} does not match the network input {net.input_shape[0]}")
        _, val_chips = chip_split(
            _load_scenes(stems), ds.chip_size, ds.n_chips, ds.train_fraction, run.seed, _denoise_cfg(args, run)
        )
        latency, _ = per_chip_latency_ms(net, val_chips)
        counts = chip_confusion(classify(net, val_chips), [c.label for c in val_chips])
        report = metrics(counts, "chip", training_ms, latency)
    payload = report.to_dict()
    out = args.out or paths.out
    if out is not None:
        atomic_write_json(out, payload)
    _emit(payload)


def cmd_bench(args, run: RunConfig) -> None:
    cfg = run.section("bench")
    cfg = replace(cfg, seed=run.seed)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    if args.scenes is not None:
        cfg = replace(cfg, scenes=replace(cfg.scenes, n_scenes=args.scenes))
    if args.heldout is not None:
        cfg = replace(cfg, heldout=replace(cfg.heldout, n_scenes=args.heldout))
    if args.n_chips is not None:
        cfg = replace(cfg, n_chips=args.n_chips)
    report, _, _ = run_bench(cfg, weights_out=args.weights_out)
    if args.out is not None:
        atomic_write_json(args.out, report)
    summary = {"seed": report["seed"], "dataset": report["dataset"], "chip": report["chip"]}
    for key in ("box", "cfar_baseline"):
        if key in report:
            summary[key] = report[key]
    _emit(summary)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output path or scene stem")

    parser = argparse.ArgumentParser(prog="sarvessel", description="SAR vessel detection toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesise a scene with truth")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--looks", type=int)
    p.add_argument("--clutter-mean", type=float)
    p.add_argument("--band-ratio", type=float)
    p.add_argument("--vessels", type=int)
    p.add_argument("--size-min", type=int)
    p.add_argument("--size-max", type=int)
    p.add_argument("--tcr-min", type=float)
    p.add_argument("--tcr-max", type=float)
    p.add_argument("--scene-id")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("denoise", parents=[common], help="wavelet-denoise every band of a scene")
    p.add_argument("--scene")
    p.add_argument("--family", choices=["haar", "db4"])
    p.add_argument("--levels", type=int)
    p.add_argument("--rule", choices=["soft", "hard"])
    p.add_argument("--linear", action="store_true", help="threshold intensities instead of log intensities")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("cfar", parents=[common], help="CFAR threshold detection on one band")
    p.add_argument("--scene")
    p.add_argument("--band", default="VV")
    p.add_argument("--guard", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--pfa", type=float)
    p.add_argument("--variant", choices=["ca", "two_param"])
    p.add_argument("--k", type=float)
    p.add_argument("--mask", help="write the detection mask as a PGM image")
    p.set_defaults(func=cmd_cfar)

    def dataset_flags(p):
        p.add_argument("--scenes", nargs="+")
        p.add_argument("--chip-size", type=int)
        p.add_argument("--n-chips", type=int)
        p.add_argument("--train-fraction", type=float)
        p.add_argument("--no-denoise", action="store_true")

    p = sub.add_parser("train", parents=[common], help="train the chip classifier")
    dataset_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--init-weights")
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="detect vessels in a scene")
    p.add_argument("--scene")
    p.add_argument("--weights")
    p.add_argument("--overlay", help="write a PGM of the VV band with detection outlines")
    p.add_argument("--mode", choices=["cfar", "dense"])
    p.add_argument("--stride", type=int)
    p.add_argument("--score-threshold", type=float)
    p.add_argument("--nms-iou", type=float)
    p.add_argument("--pfa", type=float)
    p.add_argument("--guard", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--no-denoise", action="store_true")
    p.add_argument("--no-localize", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score chips or detections")
    dataset_flags(p)
    p.add_argument("--mode", choices=["chip", "box"])
    p.add_argument("--weights")
    p.add_argument("--detections")
    p.add_argument("--truth", help="scene stem or truth JSON file")
    p.add_argument("--iou-min", type=float)
    p.add_argument("--history", help="training history JSON supplying training_time_ms")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="run the full synthetic benchmark")
    p.add_argument("--weights-out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--scenes", type=int, help="number of training scenes")
    p.add_argument("--heldout", type=int, help="number of held-out detection scenes")
    p.add_argument("--n-chips", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = load_run_config(args.config)
        if args.seed is not None:
            run.seed = args.seed
        _check_seed(run.seed)
        args.func(args, run)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
