"""Blur synthesis by averaging virtual high-rate frames in signal space.

Display frames live in gamma-encoded space; physical light does not.
Interpolation and averaging therefore run after undoing the response
curve x -> x^(1/gamma) and the result is re-encoded at the end, which is
what makes synthetic blur match real shutter integration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .media_io import FrameSequence


@dataclass(frozen=True)
class CrfParams:
    """Camera response curve x -> x^(1/gamma) on [0, 1]."""

    gamma: float = 2.2

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0.0:
            raise DataError(f"gamma must be finite and > 0, got {self.gamma}")


@dataclass(frozen=True)
class SynthSpec:
    """rate_multiplier virtual frames per input interval; average_count
    consecutive virtual frames integrate into one blurred output."""

    rate_multiplier: int = 8
    average_count: int = 8

    def __post_init__(self):
        if self.rate_multiplier < 1:
            raise DataError(
                f"rate multiplier must be >= 1, got {self.rate_multiplier}")
        if self.average_count < 1:
            raise DataError(
                f"average count must be >= 1, got {self.average_count}")


def crf_apply(signal: np.ndarray, params: CrfParams = CrfParams()) -> np.ndarray:
    """Signal space -> display space."""
    return np.power(np.asarray(signal, dtype=np.float64), 1.0 / params.gamma)


def crf_invert(frame: np.ndarray, params: CrfParams = CrfParams()) -> np.ndarray:
    """Display space -> signal space."""
    return np.power(np.asarray(frame, dtype=np.float64), params.gamma)


def interpolate_virtual(a: np.ndarray, b: np.ndarray, rate_multiplier: int,
                        params: CrfParams = CrfParams()) -> list:
    """Virtual frames at fractions k/rate_multiplier from a toward b,
    k = 0 .. rate_multiplier-1.  Blending happens in signal space; the
    k = 0 frame is a itself, bit for bit."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if rate_multiplier < 1:
        raise DataError(f"rate multiplier must be >= 1, got {rate_multiplier}")
    out = [a.copy()]
    if rate_multiplier == 1:
        return out
    if np.array_equal(a, b):
        # Blending identical frames must return them untouched; the
        # decode/encode round trip would cost a few ulps otherwise.
        out.extend(a.copy() for _ in range(1, rate_multiplier))
        return out
    sa = crf_invert(a, params)
    sb = crf_invert(b, params)
    for k in range(1, rate_multiplier):
        f = k / rate_multiplier
        out.append(crf_apply((1.0 - f) * sa + f * sb, params))
    return out


def virtual_timeline(frames: list, rate_multiplier: int,
                     params: CrfParams = CrfParams()) -> list:
    """Expand n frames to (n-1) * rate_multiplier + 1 virtual frames."""
    if len(frames) < 2:
        raise DataError(f"need at least 2 frames, got {len(frames)}")
    timeline = []
    for a, b in zip(frames[:-1], frames[1:]):
        timeline.extend(interpolate_virtual(a, b, rate_multiplier, params))
    timeline.append(np.asarray(frames[-1], dtype=np.float64).copy())
    return timeline


def synthesize_blur(sharp: FrameSequence, spec: SynthSpec = SynthSpec(),
                    params: CrfParams = CrfParams()) -> FrameSequence:
    """Blur a sharp sequence.  Output frame t averages average_count
    virtual frames centered on sharp frame t's timestamp, in signal
    space; window indices clamp at the timeline ends.  Frame count and
    size are preserved."""
    n = len(sharp)
    if n < 2:
        raise DataError(f"blur synthesis needs at least 2 frames, got {n}")
    timeline = virtual_timeline(sharp.frames, spec.rate_multiplier, params)
    total = len(timeline)
    if spec.average_count > total:
        raise DataError(
            f"average count {spec.average_count} exceeds the "
            f"{total}-frame virtual timeline")
    m = spec.average_count
    outputs = []
    for t in range(n):
        center = t * spec.rate_multiplier
        lo = center - (m - 1) // 2
        idx = [min(max(lo + j, 0), total - 1) for j in range(m)]
        if m == 1:
            outputs.append(timeline[idx[0]].copy())
            continue
        acc = np.zeros_like(timeline[0])
        for i in idx:
            acc += crf_invert(timeline[i], params)
        blurred = crf_apply(acc / m, params)
        outputs.append(np.clip(blurred, 0.0, 1.0))
    return FrameSequence(outputs, sharp.center_index)
