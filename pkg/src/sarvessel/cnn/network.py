"""Network container, forward/backward passes and the cross-entropy loss."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import ArchitectureMismatchError, ValidationError
from ..scene_io import SEA, VESSEL, Chip
from .layers import Conv2d, Dense, Flatten, Layer, MaxPool, ReLU, Softmax

CLASS_NAMES = (SEA, VESSEL)
PROB_FLOOR = 1e-12
LOG_EPS = 1e-10


@dataclass
class Network:
    """Layer stack with per-layer parameter lists.

    ``norm_mean`` / ``norm_std`` are the per-band statistics of
    log-intensity chips measured on the training set; :func:`prepare_input`
    applies them before the first layer.
    """

    layers: list[Layer]
    params: list[list[np.ndarray]]
    input_shape: tuple[int, int, int]
    n_classes: int = 2
    norm_mean: Optional[np.ndarray] = None
    norm_std: Optional[np.ndarray] = None

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        check_architecture(self.layers, self.input_shape, self.n_classes)
        if len(self.params) != len(self.layers):
            raise ValidationError("one parameter list per layer is required")
        for i, (layer, ps) in enumerate(zip(self.layers, self.params)):
            shapes = [tuple(p.shape) for p in ps]
            if shapes != layer.param_shapes():
                raise ValidationError(f"layer {i} ({layer!r}) expects parameter shapes {layer.param_shapes()}, got {shapes}")

    @property
    def n_params(self) -> int:
        return int(sum(p.size for ps in self.params for p in ps))

    def flat_params(self) -> list[np.ndarray]:
        return [p for ps in self.params for p in ps]

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Network":
        out = self.copy()
        out.params = [[p.astype(dtype) for p in ps] for ps in out.params]
        return out

    def describe(self) -> list[dict]:
        return [layer.describe() for layer in self.layers]


def check_architecture(layers: Sequence[Layer], input_shape, n_classes: int = 2) -> tuple[int, ...]:
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        try:
            shape = layer.output_shape(shape)
        except ValidationError as exc:
            raise ValidationError(f"layer {i} ({layer!r}): {exc}") from None
    if shape != (n_classes,):
        raise ValidationError(f"network output shape {shape} does not match {n_classes} classes")
    if not layers or not isinstance(layers[-1], Softmax):
        raise ValidationError("the last layer must be Softmax")
    return shape


def default_layers(chip_size: int = 32, n_bands: int = 2) -> list[Layer]:
    """Conv(8)-ReLU-Pool-Conv(16)-ReLU-Pool-Dense(32)-ReLU-Dense(2)-Softmax."""
    flat = (chip_size // 4) * (chip_size // 4) * 16
    return [
        Conv2d(n_bands, 8), ReLU(), MaxPool(),
        Conv2d(8, 16), ReLU(), MaxPool(),
        Flatten(),
        Dense(flat, 32), ReLU(),
        Dense(32, 2),
        Softmax(),
    ]


def init_params(layers: Sequence[Layer], seed: int) -> list[list[np.ndarray]]:
    rng = np.random.Generator(np.random.PCG64(seed))
    return [layer.init_params(rng) for layer in layers]


def build_network(layers: Sequence[Layer], input_shape, seed: int = 0) -> Network:
    layers = list(layers)
    return Network(layers, init_params(layers, seed), tuple(input_shape))


def default_network(chip_size: int = 32, n_bands: int = 2, seed: int = 0) -> Network:
    if chip_size < 4 or chip_size % 4:
        raise ValidationError(f"default architecture needs a chip size divisible by 4, got {chip_size}")
    return build_network(default_layers(chip_size, n_bands), (chip_size, chip_size, n_bands), seed)


def same_architecture(a: Network, b: Network) -> None:
    """Raise :class:`ArchitectureMismatchError` naming the first difference."""
    for i, (la, lb) in enumerate(zip(a.layers, b.layers)):
        if la != lb:
            raise ArchitectureMismatchError(f"layer {i} differs: {la!r} vs {lb!r}")
    if len(a.layers) != len(b.layers):
        raise ArchitectureMismatchError(f"layer count differs: {len(a.layers)} vs {len(b.layers)}")
    if tuple(a.input_shape) != tuple(b.input_shape):
        raise ArchitectureMismatchError(f"input shape differs: {tuple(a.input_shape)} vs {tuple(b.input_shape)}")


# --------------------------------------------------------------------------
# passes


def _check_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(net.input_shape):
        raise ValidationError(f"batch shape {batch.shape} does not match N x {tuple(net.input_shape)}")
    return batch


def forward_cached(net: Network, batch: np.ndarray):
    x = _check_batch(net, batch)
    dtype = net.params[0][0].dtype if net.params and net.params[0] else np.float32
    x = x.astype(dtype, copy=False)
    caches = []
    for layer, ps in zip(net.layers, net.params):
        x, cache = layer.forward(ps, x)
        caches.append(cache)
    return x, caches


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (N, n_classes); rows sum to one."""
    return forward_cached(net, batch)[0]


def loss_ce(probs: np.ndarray, labels) -> float:
    """Mean negative log-likelihood of the true class (floored at 1e-12)."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    p_true = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p_true.astype(np.float64), PROB_FLOOR))))


def loss_grad(probs: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    rows = np.arange(n)
    p_true = probs[rows, labels]
    dp = np.zeros_like(probs)
    live = p_true > PROB_FLOOR
    dp[rows[live], labels[live]] = -1.0 / (n * p_true[live])
    return dp


def backward_from_cache(net: Network, probs, caches, labels) -> list[list[np.ndarray]]:
    dy = loss_grad(probs, labels)
    grads: list[list[np.ndarray]] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        dy, g = net.layers[i].backward(net.params[i], caches[i], dy, need_dx=i > 0)
        grads[i] = g
    return grads


def backward(net: Network, batch: np.ndarray, labels) -> list[list[np.ndarray]]:
    """Gradients of ``loss_ce(forward(net, batch), labels)`` per layer parameter."""
    probs, caches = forward_cached(net, batch)
    return backward_from_cache(net, probs, caches, labels)


# --------------------------------------------------------------------------
# chip preparation


def chips_to_array(chips: Sequence[Chip]) -> np.ndarray:
    if not chips:
        raise ValidationError("no chips given")
    return np.stack([c.data for c in chips]).astype(np.float32)


def chip_labels(chips: Sequence[Chip]) -> np.ndarray:
    missing = [i for i, c in enumerate(chips) if c.label is None]
    if missing:
        raise ValidationError(f"chips without label at positions {missing[:5]}")
    return np.array([CLASS_NAMES.index(c.label) for c in chips], dtype=np.int64)


def log_intensity(raw: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(raw.astype(np.float64), 0.0) + LOG_EPS)


def fit_normalization(net: Network, raw: np.ndarray) -> None:
    logs = log_intensity(raw)
    net.norm_mean = logs.mean(axis=(0, 1, 2)).astype(np.float32)
    std = logs.std(axis=(0, 1, 2))
    net.norm_std = np.where(std > 0, std, 1.0).astype(np.float32)


def prepare_input(net: Network, raw: np.ndarray) -> np.ndarray:
    """Log-intensity chips standardised with the stored per-band statistics."""
    raw = np.asarray(raw)
    if raw.ndim == 3:
        raw = raw[None]
    logs = log_intensity(raw)
    if net.norm_mean is not None:
        logs = (logs - net.norm_mean) / net.norm_std
    return logs.astype(np.float32)


def predict_proba(net: Network, raw: np.ndarray, batch_size: int = 256) -> np.ndarray:
    x = prepare_input(net, raw)
    out = [forward(net, x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    if not out:
        return np.zeros((0, net.n_classes), dtype=np.float32)
    return np.concatenate(out)


def classify(net: Network, chips: Sequence[Chip]) -> list[str]:
    probs = predict_proba(net, chips_to_array(chips))
    return [CLASS_NAMES[i] for i in probs.argmax(axis=1)]
