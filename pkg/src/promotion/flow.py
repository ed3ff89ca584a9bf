"""Optical flow: .flo I/O, color coding, attention weights, and a coarse
block-matching estimator.

The color coding follows the familiar 55-entry wheel (six arcs through
red, yellow, green, cyan, blue, magenta) with saturation growing with
magnitude, so zero flow renders white.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .media_io import atomic_write_bytes, to_gray

FLO_MAGIC = 202021.25


@dataclass
class FlowField:
    """Dense displacements in pixels; u is horizontal, v is vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise DataError(
                f"u and v must be matching 2D arrays, got {self.u.shape} "
                f"and {self.v.shape}")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise DataError("flow contains non-finite values")

    @property
    def shape(self):
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


def read_flo(path) -> FlowField:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"flow file not found: {path}")
    if len(data) < 12:
        raise DataError(f"{path}: truncated header ({len(data)} bytes)")
    (magic,) = struct.unpack("<f", data[:4])
    if magic != FLO_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, not a .flo file")
    w, h = struct.unpack("<ii", data[4:12])
    if w <= 0 or h <= 0:
        raise DataError(f"{path}: invalid dimensions {w}x{h}")
    need = 12 + 8 * w * h
    if len(data) < need:
        raise DataError(
            f"{path}: truncated payload, have {len(data)} bytes, need {need}")
    arr = np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=12)
    arr = arr.reshape(h, w, 2).astype(np.float64)
    return FlowField(u=arr[..., 0], v=arr[..., 1])


def write_flo(path, flow: FlowField) -> None:
    h, w = flow.shape
    interleaved = np.empty((h, w, 2), dtype="<f4")
    interleaved[..., 0] = flow.u
    interleaved[..., 1] = flow.v
    payload = struct.pack("<fii", FLO_MAGIC, w, h) + interleaved.tobytes()
    atomic_write_bytes(path, payload)


def make_colorwheel() -> np.ndarray:
    """(55, 3) RGB wheel in [0, 1]: arcs RY=15, YG=6, GC=4, CB=11, BM=13,
    MR=6.  Ramps quantize through 8-bit exactly as the reference tables do."""
    arcs = [15, 6, 4, 11, 13, 6]
    ncols = sum(arcs)
    wheel = np.zeros((ncols, 3))
    ramp = lambda n: np.floor(255.0 * np.arange(n) / n) / 255.0
    col = 0
    ry, yg, gc, cb, bm, mr = arcs
    wheel[col:col + ry, 0] = 1.0
    wheel[col:col + ry, 1] = ramp(ry)
    col += ry
    wheel[col:col + yg, 0] = 1.0 - ramp(yg)
    wheel[col:col + yg, 1] = 1.0
    col += yg
    wheel[col:col + gc, 1] = 1.0
    wheel[col:col + gc, 2] = ramp(gc)
    col += gc
    wheel[col:col + cb, 1] = 1.0 - ramp(cb)
    wheel[col:col + cb, 2] = 1.0
    col += cb
    wheel[col:col + bm, 2] = 1.0
    wheel[col:col + bm, 0] = ramp(bm)
    col += bm
    wheel[col:col + mr, 2] = 1.0 - ramp(mr)
    wheel[col:col + mr, 0] = 1.0
    return wheel


_WHEEL = make_colorwheel()


def flow_to_color(flow: FlowField) -> np.ndarray:
    """(H, W, 3) float64 in [0, 1].  Hue encodes direction, saturation
    encodes magnitude relative to the field's own maximum."""
    rad = flow.magnitude()
    peak = float(rad.max())
    scale = peak if peak > 0.0 else 1.0
    u = flow.u / scale
    v = flow.v / scale
    rad = rad / scale
    ncols = _WHEEL.shape[0]
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    f = fk - k0
    col = (1.0 - f)[..., None] * _WHEEL[k0] + f[..., None] * _WHEEL[k1]
    return 1.0 - rad[..., None] * (1.0 - col)


def attention_map(flow: FlowField) -> np.ndarray:
    """(H, W) weights in [0, 1] that are large where the flow says things
    move.  The color coding paints static pixels white, so the grayscale
    is flipped during min-max normalization; a constant field (nothing
    moves relative to anything) yields an all-zero map."""
    gray = to_gray(flow_to_color(flow))
    gmin, gmax = float(gray.min()), float(gray.max())
    if gmax == gmin:
        return np.zeros_like(gray)
    return (gmax - gray) / (gmax - gmin)


def _block_sums(img: np.ndarray, block: int) -> np.ndarray:
    h, w = img.shape
    rows = np.arange(0, h, block)
    cols = np.arange(0, w, block)
    return np.add.reduceat(np.add.reduceat(img, rows, axis=0), cols, axis=1)


def estimate_flow_coarse(a: np.ndarray, b: np.ndarray,
                         block: int = 16, radius: int = 8) -> FlowField:
    """Block-matching flow from grayscale a to b.

    Each block takes the integer displacement minimizing the sum of
    absolute differences over a replicate-padded search window.  Ties go
    to the smallest displacement magnitude, then to scan order, which
    pins the result on flat regions to (0, 0)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise DataError(
            f"frames must be matching 2D arrays, got {a.shape} and {b.shape}")
    if block < 4:
        raise DataError(f"block must be >= 4, got {block}")
    if radius < 1:
        raise DataError(f"radius must be >= 1, got {radius}")
    h, w = a.shape
    bp = np.pad(b, radius, mode="edge")
    nbr = -(-h // block)
    nbc = -(-w // block)
    best_sad = np.full((nbr, nbc), np.inf)
    best_mag = np.full((nbr, nbc), np.iinfo(np.int64).max, dtype=np.int64)
    best_u = np.zeros((nbr, nbc))
    best_v = np.zeros((nbr, nbc))
    for dv in range(-radius, radius + 1):
        for du in range(-radius, radius + 1):
            shifted = bp[radius + dv: radius + dv + h,
                         radius + du: radius + du + w]
            sad = _block_sums(np.abs(a - shifted), block)
            mag = du * du + dv * dv
            better = (sad < best_sad) | ((sad == best_sad) & (mag < best_mag))
            best_sad = np.where(better, sad, best_sad)
            best_mag = np.where(better, mag, best_mag)
            best_u = np.where(better, float(du), best_u)
            best_v = np.where(better, float(dv), best_v)
    row_rep = np.minimum(np.arange(h) // block, nbr - 1)
    col_rep = np.minimum(np.arange(w) // block, nbc - 1)
    u = best_u[np.ix_(row_rep, col_rep)]
    v = best_v[np.ix_(row_rep, col_rep)]
    return FlowField(u=u, v=v)
