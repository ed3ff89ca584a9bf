"""A small float64 tensor engine with reverse-mode autodiff.

Tensors wrap numpy arrays and record, per operation, a closure that routes
the output gradient back to the inputs.  backward() on a scalar walks the
graph once in reverse topological order.  Everything stays in float64 and
every reduction has a fixed order, so repeated runs are bit-identical.

Includes the layer math the model needs (grouped 2D/3D convolution,
2x2 max pooling, nearest-neighbor upsampling, pooled means), a central
difference gradient checker, and a binary checkpoint format.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .media_io import atomic_write_bytes


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise DataError(
                f"backward() needs a scalar, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(parent: Tensor, g: np.ndarray):
    if not parent.requires_grad:
        return
    parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, parents=(a, b))
    if out.requires_grad:
        def backward():
            _accum(a, _unbroadcast(out.grad, a.data.shape))
            _accum(b, _unbroadcast(out.grad, b.data.shape))
        out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, parents=(a, b))
    if out.requires_grad:
        def backward():
            _accum(a, _unbroadcast(out.grad, a.data.shape))
            _accum(b, _unbroadcast(-out.grad, b.data.shape))
        out._backward = backward
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, parents=(a,))
    if out.requires_grad:
        def backward():
            _accum(a, -out.grad)
        out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, parents=(a, b))
    if out.requires_grad:
        def backward():
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))
        out._backward = backward
    return out


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = Tensor(a.data ** exponent, parents=(a,))
    if out.requires_grad:
        def backward():
            _accum(a, out.grad * exponent * a.data ** (exponent - 1.0))
        out._backward = backward
    return out


def sqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)
    out = Tensor(root, parents=(a,))
    if out.requires_grad:
        def backward():
            _accum(a, out.grad * 0.5 / root)
        out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), parents=(a,))
    if out.requires_grad:
        mask = a.data > 0.0
        def backward():
            _accum(a, out.grad * mask)
        out._backward = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0.0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    s[~pos] = e / (1.0 + e)
    out = Tensor(s, parents=(a,))
    if out.requires_grad:
        def backward():
            _accum(a, out.grad * s * (1.0 - s))
        out._backward = backward
    return out


def mean_all(a: Tensor) -> Tensor:
    """Scalar mean over every element.  fsum keeps the reduction exactly
    rounded, so the mean of a constant array is that constant."""
    n = a.data.size
    val = math.fsum(a.data.ravel().tolist()) / n
    out = Tensor(val, parents=(a,))
    if out.requires_grad:
        def backward():
            _accum(a, np.full(a.data.shape, float(out.grad) / n))
        out._backward = backward
    return out


def sum_all(a: Tensor) -> Tensor:
    val = math.fsum(a.data.ravel().tolist())
    out = Tensor(val, parents=(a,))
    if out.requires_grad:
        def backward():
            _accum(a, np.full(a.data.shape, float(out.grad)))
        out._backward = backward
    return out


def sum_axis(a: Tensor, axis: int) -> Tensor:
    """Sum along one axis, keeping it as size 1."""
    out = Tensor(a.data.sum(axis=axis, keepdims=True), parents=(a,))
    if out.requires_grad:
        def backward():
            _accum(a, np.broadcast_to(out.grad, a.data.shape))
        out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape), parents=(a,))
    if out.requires_grad:
        def backward():
            _accum(a, out.grad.reshape(a.data.shape))
        out._backward = backward
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DataError("stack needs at least one tensor")
    out = Tensor(np.stack([t.data for t in tensors], axis=axis),
                 parents=tuple(tensors))
    if out.requires_grad:
        def backward():
            pieces = np.split(out.grad, len(tensors), axis=axis)
            for t, g in zip(tensors, pieces):
                _accum(t, np.squeeze(g, axis=axis))
        out._backward = backward
    return out


def global_avg_pool(a: Tensor) -> Tensor:
    """(C, H, W) -> (C, 1, 1) spatial mean."""
    if a.data.ndim != 3:
        raise DataError(f"global_avg_pool expects (C, H, W), got {a.data.shape}")
    _, h, w = a.data.shape
    out = Tensor(a.data.mean(axis=(1, 2), keepdims=True), parents=(a,))
    if out.requires_grad:
        def backward():
            _accum(a, np.broadcast_to(out.grad / (h * w), a.data.shape))
        out._backward = backward
    return out


def upsample_nearest2x(a: Tensor) -> Tensor:
    """Repeat each pixel 2x2 along the last two axes."""
    if a.data.ndim < 2:
        raise DataError(f"upsample needs >= 2 dims, got {a.data.shape}")
    out_data = np.repeat(np.repeat(a.data, 2, axis=-2), 2, axis=-1)
    out = Tensor(out_data, parents=(a,))
    if out.requires_grad:
        def backward():
            g = out.grad
            lead = g.shape[:-2]
            h2, w2 = g.shape[-2], g.shape[-1]
            g = g.reshape(lead + (h2 // 2, 2, w2 // 2, 2))
            _accum(a, g.sum(axis=(-3, -1)))
        out._backward = backward
    return out


def maxpool2d(a: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Max over non-overlapping 2x2 windows on the last two axes.  Ties
    route the gradient to the first window element in row-major order."""
    if kernel != 2 or stride != 2:
        raise DataError("only kernel=2, stride=2 pooling is supported")
    d = a.data
    if d.ndim < 2:
        raise DataError(f"maxpool needs >= 2 dims, got {d.shape}")
    h, w = d.shape[-2], d.shape[-1]
    if h % 2 or w % 2:
        raise DataError(f"spatial dims must be even for 2x2 pooling, got {h}x{w}")
    lead = d.shape[:-2]
    win = d.reshape(lead + (h // 2, 2, w // 2, 2))
    win = np.moveaxis(win, -3, -2).reshape(lead + (h // 2, w // 2, 4))
    idx = np.argmax(win, axis=-1)
    pooled = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    out = Tensor(pooled, parents=(a,))
    if out.requires_grad:
        def backward():
            gwin = np.zeros(win.shape)
            np.put_along_axis(gwin, idx[..., None], out.grad[..., None], axis=-1)
            g = gwin.reshape(lead + (h // 2, w // 2, 2, 2))
            g = np.moveaxis(g, -2, -3).reshape(lead + (h, w))
            _accum(a, g)
        out._backward = backward
    return out


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract for a grouped convolution.  kernel and padding are
    (kh, kw) for 2D or (kd, kh, kw) for 3D; stride applies to every
    spatial axis.  Convolution here means cross-correlation with zero
    padding, the usual deep-learning convention."""

    in_channels: int
    out_channels: int
    kernel: tuple
    stride: int = 1
    padding: tuple = (0, 0)
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "padding", tuple(int(p) for p in self.padding))
        if len(self.kernel) not in (2, 3):
            raise DataError(f"kernel must be 2D or 3D, got {self.kernel}")
        if len(self.padding) != len(self.kernel):
            raise DataError(
                f"padding {self.padding} must match kernel rank {self.kernel}")
        if any(k < 1 for k in self.kernel):
            raise DataError(f"kernel dims must be >= 1, got {self.kernel}")
        if any(p < 0 for p in self.padding):
            raise DataError(f"padding must be >= 0, got {self.padding}")
        if self.stride < 1:
            raise DataError(f"stride must be >= 1, got {self.stride}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise DataError("channel counts must be >= 1")
        if self.groups < 1 or self.in_channels % self.groups \
                or self.out_channels % self.groups:
            raise DataError(
                f"groups={self.groups} must divide in={self.in_channels} "
                f"and out={self.out_channels}")

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels // self.groups) + self.kernel

    @property
    def fan_in(self):
        n = self.in_channels // self.groups
        for k in self.kernel:
            n *= k
        return n

    def out_size(self, in_size):
        """Spatial output dims for the given input dims."""
        in_size = tuple(in_size)
        if len(in_size) != len(self.kernel):
            raise DataError(
                f"{len(self.kernel)}D conv got spatial input {in_size}")
        out = []
        for s, k, p in zip(in_size, self.kernel, self.padding):
            o = (s + 2 * p - k) // self.stride + 1
            if o < 1:
                raise DataError(
                    f"kernel {self.kernel} with padding {self.padding} does "
                    f"not fit input {in_size}")
            out.append(o)
        return tuple(out)


def _check_conv_args(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor,
                     rank: int):
    if len(spec.kernel) != rank:
        raise DataError(f"spec kernel {spec.kernel} is not {rank}D")
    if x.data.ndim != rank + 1:
        raise DataError(
            f"{rank}D conv input must have {rank + 1} dims, got {x.data.shape}")
    if x.data.shape[0] != spec.in_channels:
        raise DataError(
            f"input has {x.data.shape[0]} channels, spec wants {spec.in_channels}")
    if weights.data.shape != spec.weight_shape:
        raise DataError(
            f"weights shape {weights.data.shape}, spec wants {spec.weight_shape}")
    if bias.data.shape != (spec.out_channels,):
        raise DataError(
            f"bias shape {bias.data.shape}, spec wants ({spec.out_channels},)")


def conv2d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor) -> Tensor:
    """Grouped 2D cross-correlation of an (Cin, H, W) input."""
    _check_conv_args(x, spec, weights, bias, rank=2)
    kh, kw = spec.kernel
    ph, pw = spec.padding
    s = spec.stride
    g = spec.groups
    cig = spec.in_channels // g
    cog = spec.out_channels // g
    _, h, w = x.data.shape
    ho, wo = spec.out_size((h, w))
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    out_data = np.empty((spec.out_channels, ho, wo))
    for gi in range(g):
        xs = xp[gi * cig:(gi + 1) * cig]
        ws = weights.data[gi * cog:(gi + 1) * cog]
        acc = np.zeros((cog, ho, wo))
        for ky in range(kh):
            for kx in range(kw):
                patch = xs[:, ky:ky + s * ho:s, kx:kx + s * wo:s]
                acc += np.tensordot(ws[:, :, ky, kx], patch, axes=([1], [0]))
        out_data[gi * cog:(gi + 1) * cog] = acc
    out_data += bias.data[:, None, None]
    out = Tensor(out_data, parents=(x, weights, bias))
    if out.requires_grad:
        def backward():
            go = out.grad
            if bias.requires_grad:
                _accum(bias, go.sum(axis=(1, 2)))
            dw = np.zeros(weights.data.shape) if weights.requires_grad else None
            dxp = np.zeros(xp.shape) if x.requires_grad else None
            for gi in range(g):
                xs = xp[gi * cig:(gi + 1) * cig]
                ws = weights.data[gi * cog:(gi + 1) * cog]
                gos = go[gi * cog:(gi + 1) * cog]
                for ky in range(kh):
                    for kx in range(kw):
                        if dw is not None:
                            patch = xs[:, ky:ky + s * ho:s, kx:kx + s * wo:s]
                            dw[gi * cog:(gi + 1) * cog, :, ky, kx] += \
                                np.tensordot(gos, patch, axes=([1, 2], [1, 2]))
                        if dxp is not None:
                            dxp[gi * cig:(gi + 1) * cig,
                                ky:ky + s * ho:s, kx:kx + s * wo:s] += \
                                np.tensordot(ws[:, :, ky, kx], gos,
                                             axes=([0], [0]))
            if dw is not None:
                _accum(weights, dw)
            if dxp is not None:
                _accum(x, dxp[:, ph:ph + h, pw:pw + w])
        out._backward = backward
    return out


def conv3d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor) -> Tensor:
    """Grouped 3D cross-correlation of an (Cin, D, H, W) input."""
    _check_conv_args(x, spec, weights, bias, rank=3)
    kd, kh, kw = spec.kernel
    pd, ph, pw = spec.padding
    s = spec.stride
    g = spec.groups
    cig = spec.in_channels // g
    cog = spec.out_channels // g
    _, d, h, w = x.data.shape
    do, ho, wo = spec.out_size((d, h, w))
    xp = np.pad(x.data, ((0, 0), (pd, pd), (ph, ph), (pw, pw)))
    out_data = np.empty((spec.out_channels, do, ho, wo))
    for gi in range(g):
        xs = xp[gi * cig:(gi + 1) * cig]
        ws = weights.data[gi * cog:(gi + 1) * cog]
        acc = np.zeros((cog, do, ho, wo))
        for kz in range(kd):
            for ky in range(kh):
                for kx in range(kw):
                    patch = xs[:, kz:kz + s * do:s, ky:ky + s * ho:s,
                               kx:kx + s * wo:s]
                    acc += np.tensordot(ws[:, :, kz, ky, kx], patch,
                                        axes=([1], [0]))
        out_data[gi * cog:(gi + 1) * cog] = acc
    out_data += bias.data[:, None, None, None]
    out = Tensor(out_data, parents=(x, weights, bias))
    if out.requires_grad:
        def backward():
            go = out.grad
            if bias.requires_grad:
                _accum(bias, go.sum(axis=(1, 2, 3)))
            dw = np.zeros(weights.data.shape) if weights.requires_grad else None
            dxp = np.zeros(xp.shape) if x.requires_grad else None
            for gi in range(g):
                xs = xp[gi * cig:(gi + 1) * cig]
                ws = weights.data[gi * cog:(gi + 1) * cog]
                gos = go[gi * cog:(gi + 1) * cog]
                for kz in range(kd):
                    for ky in range(kh):
                        for kx in range(kw):
                            if dw is not None:
                                patch = xs[:, kz:kz + s * do:s,
                                           ky:ky + s * ho:s, kx:kx + s * wo:s]
                                dw[gi * cog:(gi + 1) * cog, :, kz, ky, kx] += \
                                    np.tensordot(gos, patch,
                                                 axes=([1, 2, 3], [1, 2, 3]))
                            if dxp is not None:
                                dxp[gi * cig:(gi + 1) * cig,
                                    kz:kz + s * do:s, ky:ky + s * ho:s,
                                    kx:kx + s * wo:s] += \
                                    np.tensordot(ws[:, :, kz, ky, kx], gos,
                                                 axes=([0], [0]))
            if dw is not None:
                _accum(weights, dw)
            if dxp is not None:
                _accum(x, dxp[:, pd:pd + d, ph:ph + h, pw:pw + w])
        out._backward = backward
    return out


def grad_check(f, x: Tensor, step: float = 1e-5, sample: int = None,
               rng: np.random.Generator = None) -> float:
    """Compare reverse-mode gradients of scalar f(x) against central
    differences.  Returns the worst relative error
    |a - n| / max(1e-8, |a| + |n|) over the checked coordinates; pass
    sample to check a random subset instead of every coordinate."""
    x.grad = None
    out = f(x)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise DataError("grad_check needs f to return a scalar Tensor")
    out.backward()
    analytic = np.zeros(x.data.shape) if x.grad is None else x.grad.copy()
    n = x.data.size
    if sample is None or sample >= n:
        coords = np.arange(n)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        coords = rng.choice(n, size=sample, replace=False)
    worst = 0.0
    analytic_flat = analytic.reshape(-1)
    for idx in coords:
        orig = x.data.flat[idx]
        x.data.flat[idx] = orig + step
        f_plus = float(f(x).data)
        x.data.flat[idx] = orig - step
        f_minus = float(f(x).data)
        x.data.flat[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = analytic_flat[idx]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst


CKPT_MAGIC = b"PMWT"
CKPT_VERSION = 1


def save_checkpoint(path, meta: dict, params: dict) -> None:
    """Binary checkpoint: magic, version, JSON metadata, then each named
    float64 array with its shape.  Byte-for-byte deterministic for equal
    inputs; see the README for the exact layout."""
    meta_bytes = json.dumps(meta, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
    buf = bytearray()
    buf += CKPT_MAGIC
    buf += struct.pack("<I", CKPT_VERSION)
    buf += struct.pack("<I", len(meta_bytes))
    buf += meta_bytes
    buf += struct.pack("<I", len(params))
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f8")
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<H", len(name_bytes))
        buf += name_bytes
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}q", *arr.shape)
        buf += arr.tobytes()
    atomic_write_bytes(path, bytes(buf))


def load_checkpoint(path):
    """Returns (meta, {name: float64 array})."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise DataError(f"{path}: truncated checkpoint while reading {what}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    try:
        meta = json.loads(take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint metadata: {exc}")
    (count,) = struct.unpack("<I", take(4, "parameter count"))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{ndim}q", take(8 * ndim, "shape"))
        if any(s < 0 for s in shape):
            raise DataError(f"{path}: negative dimension in {name}")
        n = 1
        for s in shape:
            n *= s
        raw = take(8 * n, f"data for {name}")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if pos != len(data):
        raise DataError(f"{path}: {len(data) - pos} trailing bytes")
    return meta, params
