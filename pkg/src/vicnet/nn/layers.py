"""Layer kinds of the 1D engine.

Activations travel between layers in (batch, length, channels) layout so that
every convolution reduces to one GEMM; the public graph API converts from and
to (batch, channels, length). Shapes exchanged with ``output_shape`` are
per-sample ``(channels, length)`` tuples.

Every layer implements

* ``param_shapes(in_shapes)`` -> ``{name: shape}``
* ``init_params(in_shapes, rng, dtype)`` -> ``{name: array}``
* ``output_shape(in_shapes)`` -> ``(channels, length)``
* ``forward(p, xs, train, frozen)`` -> ``(y, cache)``
* ``backward(p, cache, dy, need_dx)`` -> ``(dxs, grads)``
* ``flops(in_shapes)`` -> FLOPs for one sample (MAC = 2 FLOPs; BN, PReLU,
  pooling and sigmoid: one per output element; bias add: one per output
  element; concat and repeat-upsample: none).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import _accel
from ..errors import ShapeError

LAYER_KINDS: dict[str, type] = {}


def register(cls):
    LAYER_KINDS[cls.kind] = cls
    return cls


def layer_from_dict(d: dict) -> "Layer":
    d = dict(d)
    kind = d.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ShapeError(f"unknown layer kind {kind!r}") from None
    return cls(**d)


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Zero padding (left, right) and output length for 'same' convolution."""
    n_out = -(-length // stride)
    total = max((n_out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2, n_out


class Layer:
    kind: ClassVar[str] = ""
    n_inputs: ClassVar[int] = 1
    fixed_params: ClassVar[tuple[str, ...]] = ()

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}

    def _one(self, in_shapes):
        if len(in_shapes) != 1:
            raise ShapeError(f"{self.kind} takes one input, got {len(in_shapes)}")
        return in_shapes[0]

    def _check_channels(self, c, expected):
        if c != expected:
            raise ShapeError(f"{self.kind} expects {expected} input channels, got {c}")

    def param_shapes(self, in_shapes):
        return {}

    def init_params(self, in_shapes, rng, dtype):
        return {}

    def flops(self, in_shapes) -> int:
        return 0


@register
@dataclass(frozen=True)
class Conv1d(Layer):
    kind: ClassVar[str] = "Conv1d"
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    use_bias: bool = True

    def output_shape(self, in_shapes):
        c, n = self._one(in_shapes)
        self._check_channels(c, self.in_channels)
        return self.out_channels, same_padding(n, self.kernel, self.stride)[2]

    def param_shapes(self, in_shapes):
        shapes = {"kernel": (self.out_channels, self.in_channels, self.kernel)}
        if self.use_bias:
            shapes["bias"] = (self.out_channels,)
        return shapes

    def init_params(self, in_shapes, rng, dtype):
        p = {"kernel": he_normal(rng, (self.out_channels, self.in_channels, self.kernel),
                                 self.in_channels * self.kernel, dtype)}
        if self.use_bias:
            p["bias"] = np.zeros(self.out_channels, dtype=dtype)
        return p

    def forward(self, p, xs, train, frozen):
        x = xs[0]
        b, n, c = x.shape
        lo, hi, n_out = same_padding(n, self.kernel, self.stride)
        w = p["kernel"].reshape(self.out_channels, -1)
        if self.kernel == 1 and self.stride == 1:
            cols = x.reshape(b * n, c)
            n_pad = n
        else:
            xpad = np.pad(x, ((0, 0), (lo, hi), (0, 0)))
            n_pad = xpad.shape[1]
            cols = sliding_window_view(xpad, self.kernel, axis=1)[:, ::self.stride][:, :n_out]
            cols = cols.reshape(b * n_out, c * self.kernel)
        y = cols @ w.T
        if self.use_bias:
            y += p["bias"]
        return y.reshape(b, n_out, self.out_channels), (cols, b, n, n_out, n_pad, lo)

    def backward(self, p, cache, dy, need_dx):
        cols, b, n, n_out, n_pad, lo = cache
        dy2 = dy.reshape(b * n_out, self.out_channels)
        grads = {"kernel": (dy2.T @ cols).reshape(p["kernel"].shape)}
        if self.use_bias:
            grads["bias"] = dy2.sum(axis=0)
        if not need_dx[0]:
            return [None], grads
        dcols = dy2 @ p["kernel"].reshape(self.out_channels, -1)
        if self.kernel == 1 and self.stride == 1:
            return [dcols.reshape(b, n, self.in_channels)], grads
        dcols = dcols.reshape(b, n_out, self.in_channels, self.kernel)
        dxpad = _accel.col2im(dcols, self.stride, n_pad)
        return [dxpad[:, lo:lo + n]], grads

    def flops(self, in_shapes):
        _, n_out = self.output_shape(in_shapes)
        mac = self.in_channels * self.kernel * self.out_channels * n_out
        return 2 * mac + (self.out_channels * n_out if self.use_bias else 0)


@register
@dataclass(frozen=True)
class DepthwiseSeparableConv1d(Layer):
    """Per-channel spatial filter followed by a 1x1 channel mixer.

    With ``use_bias`` both stages carry a bias (C_in + C_out entries).
    """

    kind: ClassVar[str] = "DepthwiseSeparableConv1d"
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    use_bias: bool = True

    def output_shape(self, in_shapes):
        c, n = self._one(in_shapes)
        self._check_channels(c, self.in_channels)
        return self.out_channels, same_padding(n, self.kernel, self.stride)[2]

    def param_shapes(self, in_shapes):
        shapes = {"depthwise": (self.in_channels, self.kernel),
                  "pointwise": (self.out_channels, self.in_channels)}
        if self.use_bias:
            shapes["depthwise_bias"] = (self.in_channels,)
            shapes["pointwise_bias"] = (self.out_channels,)
        return shapes

    def init_params(self, in_shapes, rng, dtype):
        p = {"depthwise": he_normal(rng, (self.in_channels, self.kernel), self.kernel, dtype),
             "pointwise": he_normal(rng, (self.out_channels, self.in_channels), self.in_channels, dtype)}
        if self.use_bias:
            p["depthwise_bias"] = np.zeros(self.in_channels, dtype=dtype)
            p["pointwise_bias"] = np.zeros(self.out_channels, dtype=dtype)
        return p

    def forward(self, p, xs, train, frozen):
        x = xs[0]
        b, n, c = x.shape
        lo, hi, n_out = same_padding(n, self.kernel, self.stride)
        xpad = np.pad(x, ((0, 0), (lo, hi), (0, 0))) if lo or hi else x
        mid = _accel.depthwise_forward(xpad, p["depthwise"], self.stride, n_out)
        if self.use_bias:
            mid += p["depthwise_bias"]
        mid2 = mid.reshape(b * n_out, c)
        y = mid2 @ p["pointwise"].T
        if self.use_bias:
            y += p["pointwise_bias"]
        return y.reshape(b, n_out, self.out_channels), (xpad, mid2, b, n, n_out, lo)

    def backward(self, p, cache, dy, need_dx):
        xpad, mid2, b, n, n_out, lo = cache
        dy2 = dy.reshape(b * n_out, self.out_channels)
        grads = {"pointwise": dy2.T @ mid2}
        if self.use_bias:
            grads["pointwise_bias"] = dy2.sum(axis=0)
        dmid = (dy2 @ p["pointwise"]).reshape(b, n_out, self.in_channels)
        if self.use_bias:
            grads["depthwise_bias"] = dmid.sum(axis=(0, 1))
        dxpad, grads["depthwise"] = _accel.depthwise_backward(xpad, p["depthwise"], dmid, self.stride)
        if not need_dx[0]:
            return [None], grads
        return [dxpad[:, lo:lo + n]], grads

    def flops(self, in_shapes):
        _, n_out = self.output_shape(in_shapes)
        f = 2 * self.kernel * self.in_channels * n_out + 2 * self.in_channels * self.out_channels * n_out
        if self.use_bias:
            f += (self.in_channels + self.out_channels) * n_out
        return f


@register
@dataclass(frozen=True)
class TransposedConv1d(Layer):
    """Strided transposed convolution with 'same' output length L * stride."""

    kind: ClassVar[str] = "TransposedConv1d"
    in_channels: int
    out_channels: int
    kernel: int = 2
    stride: int = 2
    use_bias: bool = True

    def output_shape(self, in_shapes):
        c, n = self._one(in_shapes)
        self._check_channels(c, self.in_channels)
        if self.kernel < self.stride:
            raise ShapeError("transposed conv requires kernel >= stride")
        return self.out_channels, n * self.stride

    def param_shapes(self, in_shapes):
        shapes = {"kernel": (self.in_channels, self.out_channels, self.kernel)}
        if self.use_bias:
            shapes["bias"] = (self.out_channels,)
        return shapes

    def init_params(self, in_shapes, rng, dtype):
        fan_in = self.in_channels * -(-self.kernel // self.stride)
        p = {"kernel": he_normal(rng, (self.in_channels, self.out_channels, self.kernel), fan_in, dtype)}
        if self.use_bias:
            p["bias"] = np.zeros(self.out_channels, dtype=dtype)
        return p

    def forward(self, p, xs, train, frozen):
        x = xs[0]
        b, n, c = x.shape
        k, s, co = self.kernel, self.stride, self.out_channels
        x2 = x.reshape(b * n, c)
        z = (x2 @ p["kernel"].reshape(c, co * k)).reshape(b, n, co, k)
        if k == s:
            y = z.transpose(0, 1, 3, 2).reshape(b, n * s, co)
        else:
            full = np.zeros((b, (n - 1) * s + k, co), dtype=x.dtype)
            span = (n - 1) * s + 1
            for j in range(k):
                full[:, j:j + span:s, :] += z[:, :, :, j]
            lo = (k - s) // 2
            y = full[:, lo:lo + n * s]
        if self.use_bias:
            y = y + p["bias"]
        return y, (x2, b, n)

    def backward(self, p, cache, dy, need_dx):
        x2, b, n = cache
        k, s, co, ci = self.kernel, self.stride, self.out_channels, self.in_channels
        if k == s:
            dz = dy.reshape(b, n, s, co).transpose(0, 1, 3, 2)
        else:
            lo = (k - s) // 2
            full = np.zeros((b, (n - 1) * s + k, co), dtype=dy.dtype)
            full[:, lo:lo + n * s] = dy
            span = (n - 1) * s + 1
            dz = np.stack([full[:, j:j + span:s, :] for j in range(k)], axis=-1)
        dz2 = dz.reshape(b * n, co * k)
        grads = {"kernel": (x2.T @ dz2).reshape(ci, co, k)}
        if self.use_bias:
            grads["bias"] = dy.sum(axis=(0, 1))
        if not need_dx[0]:
            return [None], grads
        dx = dz2 @ p["kernel"].reshape(ci, co * k).T
        return [dx.reshape(b, n, ci)], grads

    def flops(self, in_shapes):
        _, n = in_shapes[0]
        f = 2 * self.in_channels * self.out_channels * self.kernel * n
        if self.use_bias:
            f += self.out_channels * n * self.stride
        return f


@register
@dataclass(frozen=True)
class RepeatUpsample1d(Layer):
    kind: ClassVar[str] = "RepeatUpsample1d"
    factor: int = 2

    def output_shape(self, in_shapes):
        c, n = self._one(in_shapes)
        return c, n * self.factor

    def forward(self, p, xs, train, frozen):
        return np.repeat(xs[0], self.factor, axis=1), xs[0].shape

    def backward(self, p, cache, dy, need_dx):
        b, n, c = cache
        return [dy.reshape(b, n, self.factor, c).sum(axis=2)], {}


@register
@dataclass(frozen=True)
class MaxPool1d(Layer):
    kind: ClassVar[str] = "MaxPool1d"
    pool: int = 2

    def output_shape(self, in_shapes):
        c, n = self._one(in_shapes)
        if n < self.pool:
            raise ShapeError(f"length {n} shorter than pool {self.pool}")
        return c, n // self.pool

    def forward(self, p, xs, train, frozen):
        x = xs[0]
        b, n, c = x.shape
        n_out = n // self.pool
        xr = x[:, :n_out * self.pool].reshape(b, n_out, self.pool, c)
        idx = xr.argmax(axis=2)
        y = np.take_along_axis(xr, idx[:, :, None, :], axis=2)[:, :, 0, :]
        return y, (idx, x.shape)

    def backward(self, p, cache, dy, need_dx):
        idx, shape = cache
        b, n, c = shape
        n_out = dy.shape[1]
        mask = idx[:, :, None, :] == np.arange(self.pool)[None, None, :, None]
        dx = np.zeros(shape, dtype=dy.dtype)
        dx[:, :n_out * self.pool] = (mask * dy[:, :, None, :]).reshape(b, n_out * self.pool, c)
        return [dx], {}

    def flops(self, in_shapes):
        c, n = self.output_shape(in_shapes)
        return c * n


@register
@dataclass(frozen=True)
class BatchNorm1d(Layer):
    """Per-channel batch normalization.

    Train mode normalizes with mini-batch statistics and reports updated
    moving statistics; eval mode, or a frozen layer in train mode, uses the
    stored moving statistics.
    """

    kind: ClassVar[str] = "BatchNorm1d"
    fixed_params: ClassVar[tuple[str, ...]] = ("moving_mean", "moving_var")
    channels: int
    momentum: float = 0.99
    eps: float = 1e-3

    def output_shape(self, in_shapes):
        c, n = self._one(in_shapes)
        self._check_channels(c, self.channels)
        return c, n

    def param_shapes(self, in_shapes):
        return {name: (self.channels,) for name in ("gamma", "beta", "moving_mean", "moving_var")}

    def init_params(self, in_shapes, rng, dtype):
        c = self.channels
        return {"gamma": np.ones(c, dtype), "beta": np.zeros(c, dtype),
                "moving_mean": np.zeros(c, dtype), "moving_var": np.ones(c, dtype)}

    def forward(self, p, xs, train, frozen):
        x = xs[0]
        if train and not frozen:
            y, xhat, mean, var, inv = _accel.batchnorm_train(x, p["gamma"], p["beta"], self.eps)
            m = self.momentum
            updates = {"moving_mean": (m * p["moving_mean"] + (1 - m) * mean).astype(x.dtype),
                       "moving_var": (m * p["moving_var"] + (1 - m) * var).astype(x.dtype)}
            return y, (True, xhat, inv, updates)
        inv = 1.0 / np.sqrt(p["moving_var"] + self.eps)
        xhat = (x - p["moving_mean"]) * inv
        return p["gamma"] * xhat + p["beta"], (False, xhat, inv, None)

    def backward(self, p, cache, dy, need_dx):
        batch_stats, xhat, inv, _ = cache
        if batch_stats:
            dx, dgamma, dbeta = _accel.batchnorm_backward(dy, xhat, p["gamma"], inv)
            return [dx if need_dx[0] else None], {"gamma": dgamma, "beta": dbeta}
        grads = {"gamma": (dy * xhat).sum(axis=(0, 1)), "beta": dy.sum(axis=(0, 1))}
        return [dy * (p["gamma"] * inv) if need_dx[0] else None], grads

    def flops(self, in_shapes):
        c, n = in_shapes[0]
        return c * n


@register
@dataclass(frozen=True)
class PReLU(Layer):
    """x for x >= 0, a*x otherwise; one learnable slope per channel."""

    kind: ClassVar[str] = "PReLU"
    channels: int
    init: float = 0.25

    def output_shape(self, in_shapes):
        c, n = self._one(in_shapes)
        self._check_channels(c, self.channels)
        return c, n

    def param_shapes(self, in_shapes):
        return {"alpha": (self.channels,)}

    def init_params(self, in_shapes, rng, dtype):
        return {"alpha": np.full(self.channels, self.init, dtype=dtype)}

    def forward(self, p, xs, train, frozen):
        x = xs[0]
        return _accel.prelu_forward(x, p["alpha"]), x

    def backward(self, p, cache, dy, need_dx):
        dx, da = _accel.prelu_backward(cache, p["alpha"], dy)
        return [dx if need_dx[0] else None], {"alpha": da}

    def flops(self, in_shapes):
        c, n = in_shapes[0]
        return c * n


@register
@dataclass(frozen=True)
class Concat(Layer):
    """Channel-wise concatenation of inputs of equal length."""

    kind: ClassVar[str] = "Concat"
    n_inputs: ClassVar[int] = -1

    def output_shape(self, in_shapes):
        if len(in_shapes) < 2:
            raise ShapeError("Concat needs at least two inputs")
        lengths = {n for _, n in in_shapes}
        if len(lengths) != 1:
            raise ShapeError(f"Concat inputs differ in length: {sorted(lengths)}")
        return sum(c for c, _ in in_shapes), lengths.pop()

    def forward(self, p, xs, train, frozen):
        return np.concatenate(xs, axis=2), [x.shape[2] for x in xs]

    def backward(self, p, cache, dy, need_dx):
        splits = np.cumsum(cache)[:-1]
        return np.split(dy, splits, axis=2), {}


@register
@dataclass(frozen=True)
class GlobalAveragePool1d(Layer):
    kind: ClassVar[str] = "GlobalAveragePool1d"

    def output_shape(self, in_shapes):
        c, _ = self._one(in_shapes)
        return c, 1

    def forward(self, p, xs, train, frozen):
        x = xs[0]
        return x.mean(axis=1, keepdims=True), x.shape

    def backward(self, p, cache, dy, need_dx):
        b, n, c = cache
        return [np.broadcast_to(dy / n, (b, n, c)).copy()], {}

    def flops(self, in_shapes):
        c, _ = in_shapes[0]
        return c


@register
@dataclass(frozen=True)
class Sigmoid(Layer):
    kind: ClassVar[str] = "Sigmoid"

    def output_shape(self, in_shapes):
        return self._one(in_shapes)

    def forward(self, p, xs, train, frozen):
        x = xs[0]
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
        return y, y

    def backward(self, p, cache, dy, need_dx):
        y = cache
        return [dy * y * (1.0 - y)], {}

    def flops(self, in_shapes):
        c, n = in_shapes[0]
        return c * n
