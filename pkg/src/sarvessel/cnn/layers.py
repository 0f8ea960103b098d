"""Layer kernels for NHWC tensors.

Layers are stateless descriptions. Parameters live in the owning
:class:`~sarvessel.cnn.network.Network`; ``forward`` returns the output
plus whatever the matching ``backward`` needs, so one network can be
evaluated from several call sites without hidden caches.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ValidationError

_OFFSETS = [(i, j) for i in range(3) for j in range(3)]


class Layer:
    kind = "layer"

    def param_shapes(self) -> list[tuple[int, ...]]:
        return []

    def init_params(self, rng: np.random.Generator) -> list[np.ndarray]:
        return []

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, params, x):
        raise NotImplementedError

    def backward(self, params, cache, dy, need_dx=True):
        """Return ``(dx, param_grads)``; ``dx`` may be None when not needed."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": self.kind}

    def __eq__(self, other):
        return type(self) is type(other) and self.describe() == other.describe()

    def __repr__(self):
        extra = {k: v for k, v in self.describe().items() if k != "type"}
        args = ", ".join(f"{k}={v}" for k, v in extra.items())
        return f"{type(self).__name__}({args})"


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Conv2d(Layer):
    """3x3 cross-correlation, stride 1, zero padding 1. Weights are (3, 3, in, out)."""

    kind = "conv2d"

    def __init__(self, in_ch: int, out_ch: int):
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)

    def param_shapes(self):
        return [(3, 3, self.in_ch, self.out_ch), (self.out_ch,)]

    def init_params(self, rng):
        w_shape, b_shape = self.param_shapes()
        return [he_uniform(rng, w_shape, 9 * self.in_ch), np.zeros(b_shape, dtype=np.float32)]

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.in_ch:
            raise ValidationError(f"Conv2d expects {self.in_ch} input channels, got {c}")
        return (h, w, self.out_ch)

    def forward(self, params, x):
        weight, bias = params
        n, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        cols = np.concatenate([xp[:, i:i + h, j:j + w, :] for i, j in _OFFSETS], axis=-1)
        cols = cols.reshape(n * h * w, 9 * c)
        y = cols @ weight.reshape(9 * c, self.out_ch) + bias
        return y.reshape(n, h, w, self.out_ch), (cols, x.shape)

    def backward(self, params, cache, dy, need_dx=True):
        weight, _ = params
        cols, (n, h, w, c) = cache
        dy2 = dy.reshape(-1, self.out_ch)
        dw = (cols.T @ dy2).reshape(weight.shape)
        db = dy2.sum(axis=0)
        if not need_dx:
            return None, [dw, db]
        dcols = (dy2 @ weight.reshape(9 * c, self.out_ch).T).reshape(n, h, w, 9, c)
        dxp = np.zeros((n, h + 2, w + 2, c), dtype=dy.dtype)
        for k, (i, j) in enumerate(_OFFSETS):
            dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, k, :]
        return dxp[:, 1:-1, 1:-1, :], [dw, db]

    def describe(self):
        return {"type": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch}


class ReLU(Layer):
    kind = "relu"

    def forward(self, params, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, mask, dy, need_dx=True):
        # subgradient at exactly zero is zero
        return dy * mask, []


class MaxPool(Layer):
    """2x2 max pooling, stride 2; trailing odd rows/columns are dropped."""

    kind = "maxpool"

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise ValidationError(f"MaxPool needs at least 2x2 input, got {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, params, x):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        win = (
            x[:, :2 * h2, :2 * w2, :]
            .reshape(n, h2, 2, w2, 2, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, h2, w2, c, 4)
        )
        # argmax returns the first maximum in row-major window order
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, params, cache, dy, need_dx=True):
        idx, (n, h, w, c) = cache
        h2, w2 = h // 2, w // 2
        dwin = np.zeros((n, h2, w2, c, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx_core = dwin.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
        if (2 * h2, 2 * w2) == (h, w):
            return dx_core, []
        dx = np.zeros((n, h, w, c), dtype=dy.dtype)
        dx[:, :2 * h2, :2 * w2, :] = dx_core
        return dx, []


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, shape, dy, need_dx=True):
        return dy.reshape(shape), []


class Dense(Layer):
    """Affine map ``x @ W + b`` with ``W`` of shape (in_dim, out_dim)."""

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def param_shapes(self):
        return [(self.in_dim, self.out_dim), (self.out_dim,)]

    def init_params(self, rng):
        w_shape, b_shape = self.param_shapes()
        return [he_uniform(rng, w_shape, self.in_dim), np.zeros(b_shape, dtype=np.float32)]

    def output_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ValidationError(f"Dense expects input ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)

    def forward(self, params, x):
        weight, bias = params
        return x @ weight + bias, x

    def backward(self, params, x, dy, need_dx=True):
        weight, _ = params
        dx = dy @ weight.T if need_dx else None
        return dx, [x.T @ dy, dy.sum(axis=0)]

    def describe(self):
        return {"type": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, params, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        return p, p

    def backward(self, params, p, dy, need_dx=True):
        return p * (dy - np.sum(dy * p, axis=-1, keepdims=True)), []


LAYER_TYPES = {cls.kind: cls for cls in (Conv2d, ReLU, MaxPool, Flatten, Dense, Softmax)}


def layer_from_dict(spec: dict) -> Layer:
    try:
        cls = LAYER_TYPES[spec["type"]]
        args = {k: v for k, v in spec.items() if k != "type"}
        return cls(**args)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad layer descriptor {spec!r}") from exc
