"""Neural network layers and pointwise ops on top of the tensor engine.

Single-sample convention throughout: feature maps are rank-3 (C, H, W) and
vectors are rank-1. Batching happens one tape per sample at the training
level, never inside a layer.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, from_op


class Module:
    """Minimal parameter container.

    Attributes that are Tensors count as parameters; attributes that are
    Modules or lists of Modules recurse. Names follow attribute paths, e.g.
    ``encoder.blocks.0.conv_a.weight``, and stay stable across runs, which is
    what the checkpoint format keys on.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), dtype=dtype)


# -- activations -------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return from_op("relu", np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    mask = x.data > 0
    return from_op("leaky_relu", np.where(mask, x.data, slope * x.data), (x,),
                   lambda g: (np.where(mask, g, slope * g),))


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    return from_op("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ValueError(f"softmax: axis {axis} invalid for rank {x.data.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return from_op("softmax", y, (x,), vjp)


# -- pooling and channel reweighting ------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    """(C, H, W) -> per-channel spatial mean, shape (C,)."""
    if x.data.ndim != 3:
        raise ValueError(f"global_avg_pool expects rank-3 input, got {tuple(x.shape)}")
    c, h, w = x.shape
    inv = 1.0 / (h * w)

    def vjp(g):
        return (np.broadcast_to(g[:, None, None] * inv, (c, h, w)),)

    return from_op("global_avg_pool", x.data.mean(axis=(1, 2)), (x,), vjp)


def scale_channels(x: Tensor, z: Tensor) -> Tensor:
    """Multiply each channel of (C, H, W) by the matching entry of z (C,)."""
    if x.data.ndim != 3 or z.data.ndim != 1 or x.shape[0] != z.shape[0]:
        raise ValueError(f"scale_channels: incompatible shapes {tuple(x.shape)} and {tuple(z.shape)}")
    xd, zd = x.data, z.data

    def vjp(g):
        return g * zd[:, None, None], (g * xd).sum(axis=(1, 2))

    return from_op("scale_channels", xd * zd[:, None, None], (x, z), vjp)


# -- convolution ---------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (C_in, H, W) with (C_out, C_in, k, k) plus bias.

    im2col + matmul; the column matrix is kept for the backward pass.
    """
    c_out, c_in, k, k2 = weight.shape
    if k != k2:
        raise ValueError(f"conv2d: non-square kernel {k}x{k2}")
    if x.data.ndim != 3 or x.shape[0] != c_in:
        raise ValueError(f"conv2d: input {tuple(x.shape)} does not match weight "
                         f"{tuple(weight.shape)} (expected {c_in} input channels)")
    _, h, w = x.shape
    if (h + 2 * padding - k) % stride != 0 or (w + 2 * padding - k) % stride != 0:
        raise ValueError(f"conv2d: non-integer output extent for input {h}x{w}, "
                         f"kernel {k}, stride {stride}, padding {padding}")
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c_in * k * k, h_out * w_out)
    wmat = weight.data.reshape(c_out, c_in * k * k)
    out = (wmat @ cols + bias.data[:, None]).reshape(c_out, h_out, w_out)

    hp, wp = xp.shape[1], xp.shape[2]

    def vjp(g):
        gm = g.reshape(c_out, h_out * w_out)
        dw = (gm @ cols.T).reshape(weight.shape)
        db = gm.sum(axis=1)
        dcols = (wmat.T @ gm).reshape(c_in, k, k, h_out, w_out)
        dxp = np.zeros((c_in, hp, wp), dtype=g.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, ki:ki + stride * h_out:stride, kj:kj + stride * w_out:stride] += dcols[:, ki, kj]
        dx = dxp[:, padding:padding + h, padding:padding + w] if padding else dxp
        return dx, dw, db

    return from_op("conv2d", out, (x, weight, bias), vjp)


class Conv2dLayer(Module):
    """2-D convolution; padding defaults to (k-1)/2 so stride-1 layers keep H x W."""

    def __init__(self, in_channels, out_channels, kernel_size, rng,
                 stride=1, padding=None, dtype=np.float32):
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = (kernel_size - 1) // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = kaiming_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size),
                                      fan_in, dtype)
        self.bias = Tensor(np.zeros(out_channels), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of a vector: weight (out, in) @ x (in,) + bias (out,)."""
    if x.data.ndim != 1 or x.shape[0] != weight.shape[1]:
        raise ValueError(f"linear: input {tuple(x.shape)} does not match weight {tuple(weight.shape)}")
    xd, wd = x.data, weight.data

    def vjp(g):
        return wd.T @ g, np.outer(g, xd), g

    return from_op("linear", wd @ xd + bias.data, (x, weight, bias), vjp)


class LinearLayer(Module):
    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = kaiming_uniform(rng, (out_features, in_features), in_features, dtype)
        self.bias = Tensor(np.zeros(out_features), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


# -- sub-pixel rearrangement ---------------------------------------------------

def _shuffle_data(d: np.ndarray, r: int) -> np.ndarray:
    c_r2, h, w = d.shape
    c = c_r2 // (r * r)
    return d.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)


def _unshuffle_data(d: np.ndarray, r: int) -> np.ndarray:
    c, hr, wr = d.shape
    h, w = hr // r, wr // r
    return d.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c * r * r, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(C*r^2, H, W) -> (C, r*H, r*W); out[c, y, x] = in[c*r^2 + r*(y%r) + x%r, y//r, x//r]."""
    if x.data.ndim != 3 or x.shape[0] % (r * r) != 0:
        raise ValueError(f"pixel_shuffle: channels {x.shape[0]} not divisible by r^2 = {r * r}")
    return from_op("pixel_shuffle", np.ascontiguousarray(_shuffle_data(x.data, r)), (x,),
                   lambda g: (_unshuffle_data(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if x.data.ndim != 3 or x.shape[1] % r != 0 or x.shape[2] % r != 0:
        raise ValueError(f"pixel_unshuffle: spatial extents {tuple(x.shape[1:])} not divisible by r = {r}")
    return from_op("pixel_unshuffle", np.ascontiguousarray(_unshuffle_data(x.data, r)), (x,),
                   lambda g: (_shuffle_data(g, r),))


# -- bilinear warping ------------------------------------------------------------

def bilinear_warp(x: Tensor, offsets: Tensor) -> Tensor:
    """Sample (C, H, W) at (y + dy, x + dx) with border clamping.

    `offsets` is (2, H, W): offsets[0] is dy, offsets[1] is dx. Differentiable
    in both the features and the offsets; the offset gradient is gated to zero
    where the sample location was clamped.
    """
    if x.data.ndim != 3 or offsets.data.ndim != 3 or offsets.shape[0] != 2 \
            or offsets.shape[1:] != x.shape[1:]:
        raise ValueError(f"bilinear_warp: features {tuple(x.shape)} and offsets "
                         f"{tuple(offsets.shape)} do not align")
    c, h, w = x.shape
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ry = gy + offsets.data[0]
    rx = gx + offsets.data[1]
    yy = np.clip(ry, 0, h - 1)
    xx = np.clip(rx, 0, w - 1)
    y0 = np.floor(yy).astype(np.intp)
    x0 = np.floor(xx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (yy - y0).astype(x.data.dtype)
    fx = (xx - x0).astype(x.data.dtype)

    v00 = x.data[:, y0, x0]
    v01 = x.data[:, y0, x1]
    v10 = x.data[:, y1, x0]
    v11 = x.data[:, y1, x1]
    out = ((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11))

    in_y = ((ry > 0) & (ry < h - 1)).astype(x.data.dtype)
    in_x = ((rx > 0) & (rx < w - 1)).astype(x.data.dtype)

    def vjp(g):
        w00 = (1 - fy) * (1 - fx)
        w01 = (1 - fy) * fx
        w10 = fy * (1 - fx)
        w11 = fy * fx
        dx_flat = np.zeros((c, h * w), dtype=g.dtype)
        gm = g.reshape(c, h * w)
        for wt, iy, ix in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
            np.add.at(dx_flat, (slice(None), (iy * w + ix).ravel()), gm * wt.ravel())
        dval_dy = (1 - fx) * (v10 - v00) + fx * (v11 - v01)
        dval_dx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
        doff = np.stack([(g * dval_dy).sum(axis=0) * in_y,
                         (g * dval_dx).sum(axis=0) * in_x])
        return dx_flat.reshape(c, h, w), doff

    return from_op("bilinear_warp", out, (x, offsets), vjp)
