"""Frame and sequence I/O.

All frames are held in memory as float64 arrays of shape (H, W, 3) with
values in [0, 1].  Quantization to 8-bit happens only at the PNG boundary
and rounds half away from zero, so a value of exactly k/255 survives a
save/load round trip unchanged.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def atomic_write_bytes(path, data: bytes) -> None:
    """Write bytes to a temp file in the same directory, then rename over
    the target.  A crash mid-write never leaves a partial file behind."""
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def decode_frame(raw: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float64 (H, W, 3) in [0, 1]."""
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) image, got shape {raw.shape}")
    return raw.astype(np.float64) / 255.0


def encode_frame(frame: np.ndarray) -> np.ndarray:
    """float64 (H, W, 3) in [0, 1] -> uint8, rounding half up."""
    q = np.floor(np.asarray(frame, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(q, 0.0, 255.0).astype(np.uint8)


def load_frame(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            raw = np.asarray(img.convert("RGB"))
    except FileNotFoundError:
        raise DataError(f"frame not found: {path}")
    except (OSError, ValueError) as exc:
        raise DataError(f"unreadable image {path}: {exc}")
    return decode_frame(raw)


def save_frame(path, frame: np.ndarray) -> None:
    path = Path(path)
    img = Image.fromarray(encode_frame(frame), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def save_gray(path, gray: np.ndarray) -> None:
    """Save a single-channel map in [0, 1] as an 8-bit grayscale PNG."""
    q = np.floor(np.asarray(gray, dtype=np.float64) * 255.0 + 0.5)
    img = Image.fromarray(np.clip(q, 0.0, 255.0).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(Path(path), buf.getvalue())


def to_gray(frame: np.ndarray) -> np.ndarray:
    """Luma of an (H, W, 3) frame.  Integer weights over a common /1000
    denominator keep white at exactly 1.0 in float64."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) frame, got shape {frame.shape}")
    r, g, b = frame[..., 0], frame[..., 1], frame[..., 2]
    return (299.0 * r + 587.0 * g + 114.0 * b) / 1000.0


@dataclass
class FrameSequence:
    """An ordered run of same-sized frames plus the index treated as 'now'."""

    frames: list = field(default_factory=list)
    center_index: int = 0

    def __post_init__(self):
        if not self.frames:
            raise DataError("a frame sequence needs at least one frame")
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.ndim != 3 or f.shape[2] != 3:
                raise DataError(f"frame {i} is not (H, W, 3): shape {f.shape}")
            if f.shape != shape:
                raise DataError(
                    f"frame {i} has shape {f.shape}, expected {shape}")
            lo, hi = float(f.min()), float(f.max())
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo < 0.0 or hi > 1.0:
                raise DataError(
                    f"frame {i} has values outside [0, 1] (min {lo}, max {hi})")
        if not 0 <= self.center_index < len(self.frames):
            raise DataError(
                f"center index {self.center_index} out of range for "
                f"{len(self.frames)} frames")

    def __len__(self):
        return len(self.frames)

    @property
    def height(self):
        return self.frames[0].shape[0]

    @property
    def width(self):
        return self.frames[0].shape[1]

    @property
    def center(self):
        return self.frames[self.center_index]


def list_frames(dir_path, pattern: str = "*.png") -> list:
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise DataError(f"frame directory not found: {dir_path}")
    paths = sorted(dir_path.glob(pattern))
    if not paths:
        raise DataError(f"no frames matching {pattern!r} in {dir_path}")
    return paths


def load_sequence(dir_path, pattern: str = "*.png") -> FrameSequence:
    """Load every frame matching pattern, sorted by filename.  The center
    index defaults to len // 2."""
    paths = list_frames(dir_path, pattern)
    frames = []
    for p in paths:
        f = load_frame(p)
        if frames and f.shape != frames[0].shape:
            raise DataError(
                f"frame {p.name} has shape {f.shape}, expected {frames[0].shape}")
        frames.append(f)
    return FrameSequence(frames, len(frames) // 2)


def save_sequence(dir_path, seq: FrameSequence, names=None) -> None:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    if names is None:
        names = [f"{i:08d}.png" for i in range(len(seq))]
    if len(names) != len(seq):
        raise DataError(f"{len(names)} names for {len(seq)} frames")
    for name, frame in zip(names, seq.frames):
        save_frame(dir_path / name, frame)


def window_clips(seq: FrameSequence, window: int) -> list:
    """Split a sequence into one odd-length clip per frame, replicating
    boundary frames so every frame gets a full window centered on it."""
    if window < 1 or window % 2 == 0:
        raise DataError(f"window must be odd and positive, got {window}")
    n = len(seq)
    if window > n:
        raise DataError(f"window {window} exceeds sequence length {n}")
    half = window // 2
    clips = []
    for c in range(n):
        idx = [min(max(c + o, 0), n - 1) for o in range(-half, half + 1)]
        clips.append(FrameSequence([seq.frames[i] for i in idx], half))
    return clips
