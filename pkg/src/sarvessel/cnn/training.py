"""Mini-batch SGD with momentum, warm start, and a finite-difference gradient check."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, ValidationError
from ..scene_io import Chip
from .network import (
    Network,
    backward_from_cache,
    chip_labels,
    chips_to_array,
    fit_normalization,
    forward,
    forward_cached,
    init_params,
    loss_ce,
    prepare_input,
    same_architecture,
)
from .layers import MaxPool, ReLU
from .weights import load_weights


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    init_weights_path: Optional[str] = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    wall_time_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epochs": len(self.train_loss),
            "train_loss": list(self.train_loss),
            "val_accuracy": list(self.val_accuracy),
            "training_time_ms": self.wall_time_ms,
        }


def accuracy(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    if len(x) == 0:
        raise ValidationError("accuracy of an empty set is undefined")
    hits = 0
    for i in range(0, len(x), batch_size):
        hits += int(np.sum(forward(net, x[i:i + batch_size]).argmax(axis=1) == y[i:i + batch_size]))
    return hits / len(x)


def train(
    net: Network,
    train_chips: Sequence[Chip],
    val_chips: Sequence[Chip],
    cfg: TrainConfig | None = None,
) -> tuple[Network, TrainHistory]:
    """Fit ``net`` on labelled chips; the input network is left untouched.

    With ``cfg.init_weights_path`` the parameters (and input statistics) of
    that weight file seed the run; otherwise parameters are He-uniform
    initialised from ``cfg.seed`` and the input statistics are measured on
    ``train_chips``.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if not train_chips:
        raise ValidationError("empty training set")
    if not val_chips:
        raise ValidationError("empty validation set")
    y_train = chip_labels(train_chips)
    y_val = chip_labels(val_chips)
    raw_train = chips_to_array(train_chips)
    raw_val = chips_to_array(val_chips)

    model = net.copy()
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    if cfg.init_weights_path:
        warm = load_weights(cfg.init_weights_path)
        same_architecture(model, warm)
        model.params = [[p.copy() for p in ps] for ps in warm.params]
        model.norm_mean, model.norm_std = warm.norm_mean, warm.norm_std
        if model.norm_mean is None:
            fit_normalization(model, raw_train)
    else:
        model.params = init_params(model.layers, int(seeds[0].generate_state(1, np.uint64)[0]))
        fit_normalization(model, raw_train)

    x_train = prepare_input(model, raw_train)
    x_val = prepare_input(model, raw_val)
    shuffle_rng = np.random.Generator(np.random.PCG64(seeds[1]))
    velocity = [[np.zeros_like(p) for p in ps] for ps in model.params]
    lr = np.float32(cfg.learning_rate)
    mu = np.float32(cfg.momentum)
    history = TrainHistory()

    t0 = time.perf_counter()
    n = len(x_train)
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            probs, caches = forward_cached(model, x_train[idx])
            total += loss_ce(probs, y_train[idx]) * len(idx)
            grads = backward_from_cache(model, probs, caches, y_train[idx])
            for ps, vs, gs in zip(model.params, velocity, grads):
                for p, v, g in zip(ps, vs, gs):
                    v *= mu
                    v -= lr * g
                    p += v
        history.train_loss.append(total / n)
        history.val_accuracy.append(accuracy(model, x_val, y_val))
    history.wall_time_ms = (time.perf_counter() - t0) * 1000.0
    return model, history


def _activation_pattern(net: Network, caches) -> list[np.ndarray]:
    out = []
    for layer, cache in zip(net.layers, caches):
        if isinstance(layer, ReLU):
            out.append(cache)
        elif isinstance(layer, MaxPool):
            out.append(cache[0])
    return out


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(
    net: Network,
    batch: np.ndarray,
    labels,
    step: float = 1e-3,
    kink_aware: bool = True,
    min_step: float = 1e-9,
) -> float:
    """Largest relative gap between backprop and central differences.

    Both sides are evaluated on a float64 copy of ``net``; the gap for one
    parameter is ``|a - f| / max(|a|, |f|, 1e-8)``.

    A central difference whose interval changes a ReLU mask or a max-pool
    winner measures a secant across a kink rather than the derivative.
    With ``kink_aware`` the step for that parameter is halved until the
    activation pattern is stable (or ``min_step`` is reached).
    """
    shadow = net.astype(np.float64)
    x = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    probs, caches = forward_cached(shadow, x)
    analytic = backward_from_cache(shadow, probs, caches, labels)
    base = _activation_pattern(shadow, caches)

    def evaluate():
        p, c = forward_cached(shadow, x)
        return loss_ce(p, labels), _activation_pattern(shadow, c)

    worst = 0.0
    for ps, gs in zip(shadow.params, analytic):
        for p, g in zip(ps, gs):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                h = step
                while True:
                    flat[i] = keep + h
                    up, pat_up = evaluate()
                    flat[i] = keep - h
                    down, pat_down = evaluate()
                    flat[i] = keep
                    stable = _same_pattern(pat_up, base) and _same_pattern(pat_down, base)
                    if stable or not kink_aware or h / 2 < min_step:
                        break
                    h /= 2
                numeric = (up - down) / (2.0 * h)
                a = float(gflat[i])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst
