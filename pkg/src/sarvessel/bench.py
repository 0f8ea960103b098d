"""One-shot benchmark: synthesise, train, evaluate chips, detect on held-out scenes.

Every random draw derives from the single ``seed`` through
:func:`derive_seed`, so two runs with the same configuration produce the
same weights and the same metrics; only the timing fields differ.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cnn import Network, TrainConfig, TrainHistory, classify, default_network, predict_proba, save_weights, train
from .dataset import build_chip_dataset
from .detector import DetectConfig, cfar_baseline, denoise_scene, run_detection
from .errors import ConfigError
from .evaluation import ConfusionCounts, chip_confusion, match_box_detections, metrics, split_dataset
from .scene_io import Chip, GroundTruth, SarScene, SynthParams, synth_scene
from .wavelet import DenoiseConfig

# stream tags for derive_seed
_SCENES, _HELDOUT, _DATASET, _SPLIT, _TRAIN = 1, 2, 3, 4, 5


def derive_seed(seed: int, *path: int) -> int:
    """Independent 64-bit seed for a named sub-stream of ``seed``."""
    return int(np.random.SeedSequence([seed, *path]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SceneSet:
    n_scenes: int = 20
    rows: int = 512
    cols: int = 512
    looks: int = 4
    clutter_mean_vv: float = 1.0
    band_ratio_vh: float = 0.25
    vessels_per_scene: int = 25
    vessel_size_range: tuple[int, int] = (4, 12)
    tcr_db_range: tuple[float, float] = (10.0, 20.0)

    def params(self, seed: int, index: int, prefix: str) -> SynthParams:
        return SynthParams(
            rows=self.rows,
            cols=self.cols,
            clutter_mean_vv=self.clutter_mean_vv,
            looks=self.looks,
            band_ratio_vh=self.band_ratio_vh,
            n_vessels=self.vessels_per_scene,
            vessel_size_range=tuple(self.vessel_size_range),
            tcr_db_range=tuple(self.tcr_db_range),
            seed=seed,
            scene_id=f"{prefix}-{index:03d}",
        )


def _default_heldout() -> SceneSet:
    return SceneSet(n_scenes=10, looks=1, vessels_per_scene=5, tcr_db_range=(8.0, 14.0))


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 0
    scenes: SceneSet = field(default_factory=SceneSet)
    heldout: SceneSet = field(default_factory=_default_heldout)
    n_chips: int = 1000
    train_fraction: float = 0.75
    chip_size: int = 32
    train: TrainConfig = field(default_factory=TrainConfig)
    denoise: Optional[DenoiseConfig] = field(default_factory=DenoiseConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    iou_min: float = 0.5

    def validate(self) -> None:
        if self.scenes.n_scenes < 1 or self.heldout.n_scenes < 0:
            raise ConfigError("the benchmark needs at least one training scene")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.detect.chip_size != self.chip_size:
            raise ConfigError("detect.chip_size must equal chip_size")
        self.train.validate()
        self.detect.validate()


def synth_set(scene_set: SceneSet, seed: int, tag: int, prefix: str) -> list[tuple[SarScene, GroundTruth]]:
    return [synth_scene(scene_set.params(derive_seed(seed, tag, k), k, prefix)) for k in range(scene_set.n_scenes)]


def chip_split(
    scenes: Sequence[tuple[SarScene, GroundTruth]],
    chip_size: int,
    n_chips: Optional[int],
    train_fraction: float,
    seed: int,
    denoise: Optional[DenoiseConfig],
) -> tuple[list[Chip], list[Chip]]:
    """Denoise scenes, cut the balanced chip set and split it."""
    prepared = [(denoise_scene(s, denoise), t) for s, t in scenes]
    chips = build_chip_dataset(prepared, chip_size, derive_seed(seed, _DATASET), n_chips)
    return split_dataset(chips, train_fraction, derive_seed(seed, _SPLIT))


def train_seed(seed: int) -> int:
    return derive_seed(seed, _TRAIN)


def per_chip_latency_ms(net: Network, chips: Sequence[Chip]) -> tuple[float, float]:
    """Mean and max wall time of single-chip inference."""
    times = []
    for chip in chips:
        t0 = time.perf_counter()
        predict_proba(net, chip.data[None])
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.mean(times)), float(np.max(times))


def run_bench(cfg: BenchConfig | None = None, weights_out=None) -> tuple[dict, Network, TrainHistory]:
    cfg = cfg or BenchConfig()
    cfg.validate()
    t_start = time.perf_counter()

    scenes = synth_set(cfg.scenes, cfg.seed, _SCENES, "bench")
    train_chips, val_chips = chip_split(
        scenes, cfg.chip_size, cfg.n_chips, cfg.train_fraction, cfg.seed, cfg.denoise
    )
    n_bands = train_chips[0].data.shape[2]
    net = default_network(cfg.chip_size, n_bands)
    net, history = train(net, train_chips, val_chips, replace(cfg.train, seed=train_seed(cfg.seed)))
    if weights_out is not None:
        save_weights(net, weights_out)

    latency_mean, latency_max = per_chip_latency_ms(net, val_chips)
    predictions = classify(net, val_chips)
    chip_report = metrics(
        chip_confusion(predictions, [c.label for c in val_chips]),
        "chip",
        history.wall_time_ms,
        latency_mean,
    )

    detect_cfg = replace(cfg.detect, denoise=cfg.denoise)
    hybrid = ConfusionCounts()
    baseline = ConfusionCounts()
    scene_times = []
    for scene, truth in synth_set(cfg.heldout, cfg.seed, _HELDOUT, "heldout"):
        run = run_detection(scene, net, detect_cfg)
        scene_times.append(run.detection_time_ms)
        hybrid = hybrid + match_box_detections(run.detections, truth, cfg.iou_min, run.n_proposals)
        baseline = baseline + match_box_detections(cfar_baseline(scene, detect_cfg.cfar), truth, cfg.iou_min)

    mean_scene = float(np.mean(scene_times)) if scene_times else 0.0
    report = {
        "seed": cfg.seed,
        "config": asdict(cfg),
        "dataset": {"train": len(train_chips), "val": len(val_chips), "scenes": len(scenes)},
        "chip": chip_report.to_dict(),
        "history": {"train_loss": history.train_loss, "val_accuracy": history.val_accuracy},
        "timings": {
            "training_time_ms": history.wall_time_ms,
            "per_chip_inference_ms": latency_mean,
            "per_chip_inference_max_ms": latency_max,
            "scene_detect_mean_ms": mean_scene,
            "scene_detect_max_ms": float(np.max(scene_times)) if scene_times else 0.0,
        },
    }
    if scene_times:
        report["box"] = metrics(hybrid, "box", history.wall_time_ms, mean_scene).to_dict()
        report["cfar_baseline"] = metrics(baseline, "box", 0.0, 0.0).to_dict()
    report["timings"]["total_ms"] = (time.perf_counter() - t_start) * 1000.0
    return report, net, history


def strip_timings(obj):
    """Copy of a report without wall-clock fields, for reproducibility checks."""
    if isinstance(obj, dict):
        return {k: strip_timings(v) for k, v in obj.items() if k != "timings" and not k.endswith("time_ms")}
    if isinstance(obj, list):
        return [strip_timings(v) for v in obj]
    return obj
