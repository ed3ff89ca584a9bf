"""Per-frame priors and blur reasoning.

Three cheap cues are computed for every frame of a clip: local contrast,
directional gradients, and motion relative to the clip center.  Each map is
normalized to [0, 1] by its own maximum so downstream layers see a
consistent scale regardless of scene brightness.  A sharpness statistic on
the Laplacian response turns the clip into a 5-weight reasoning vector that
says which frames to trust.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .flow import FlowField
from .media_io import FrameSequence, to_gray

# 4-neighborhood Laplacian; the classic sharpness operator.
LAPLACIAN_KERNEL = np.array(
    [[0.0, 1.0, 0.0],
     [1.0, -4.0, 1.0],
     [0.0, 1.0, 0.0]])

# Variances below this are clamped before inversion so a perfectly flat
# frame cannot blow up the reasoning weights.
VARIANCE_FLOOR = 1e-12


def _peak_normalize(raw: np.ndarray) -> np.ndarray:
    m = float(raw.max())
    if m <= 0.0:
        return np.zeros_like(raw)
    return raw / m


def contrast_map(gray: np.ndarray) -> np.ndarray:
    """Mean squared difference to the 4-neighborhood, peak-normalized.
    Borders replicate the edge pixel, so a constant image maps to zero."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2 or gray.shape[0] < 2 or gray.shape[1] < 2:
        raise DataError(f"contrast map needs a 2D image >= 2x2, got {gray.shape}")
    p = np.pad(gray, 1, mode="edge")
    up = p[:-2, 1:-1]
    down = p[2:, 1:-1]
    left = p[1:-1, :-2]
    right = p[1:-1, 2:]
    raw = ((gray - up) ** 2 + (gray - down) ** 2
           + (gray - left) ** 2 + (gray - right) ** 2) / 4.0
    return _peak_normalize(raw)


def gradient_map(gray: np.ndarray) -> np.ndarray:
    """Sum of forward differences toward the next row and next column,
    stored as |raw| / max|raw|.  The last row and column difference to a
    replicated edge and therefore contribute zero."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2 or gray.shape[0] < 2 or gray.shape[1] < 2:
        raise DataError(f"gradient map needs a 2D image >= 2x2, got {gray.shape}")
    down = np.concatenate([gray[1:, :], gray[-1:, :]], axis=0)
    right = np.concatenate([gray[:, 1:], gray[:, -1:]], axis=1)
    raw = (gray - down) + (gray - right)
    return _peak_normalize(np.abs(raw))


def motion_group(clip: FrameSequence, center_flow: FlowField) -> list:
    """One motion map per frame.  Off-center slices are |gray(center) -
    gray(frame)|, peak-normalized per slice.  The center slice is the
    peak-normalized magnitude of the supplied flow field."""
    if center_flow.u.shape != (clip.height, clip.width):
        raise DataError(
            f"flow shape {center_flow.u.shape} does not match frames "
            f"({clip.height}, {clip.width})")
    gray_c = to_gray(clip.center)
    maps = []
    for i, frame in enumerate(clip.frames):
        if i == clip.center_index:
            maps.append(_peak_normalize(np.hypot(center_flow.u, center_flow.v)))
        else:
            maps.append(_peak_normalize(np.abs(gray_c - to_gray(frame))))
    return maps


@dataclass
class PriorStack:
    """Contrast, gradient, and motion maps for one clip, one map per frame."""

    contrast: list
    gradient: list
    motion: list

    def __post_init__(self):
        n = len(self.contrast)
        if not (len(self.gradient) == len(self.motion) == n) or n == 0:
            raise DataError("prior groups must hold the same nonzero count of maps")
        shape = self.contrast[0].shape
        for group in (self.contrast, self.gradient, self.motion):
            for m in group:
                if m.shape != shape:
                    raise DataError(
                        f"prior map shape {m.shape} differs from {shape}")
                lo, hi = float(m.min()), float(m.max())
                if not (np.isfinite(lo) and np.isfinite(hi)) or lo < 0.0 or hi > 1.0:
                    raise DataError(
                        f"prior map values outside [0, 1] (min {lo}, max {hi})")

    def tensor(self) -> np.ndarray:
        """(3, n_frames, H, W) array ordered contrast, gradient, motion."""
        return np.stack([
            np.stack(self.contrast),
            np.stack(self.gradient),
            np.stack(self.motion),
        ])


def build_prior_stack(clip: FrameSequence, center_flow: FlowField) -> PriorStack:
    grays = [to_gray(f) for f in clip.frames]
    return PriorStack(
        contrast=[contrast_map(g) for g in grays],
        gradient=[gradient_map(g) for g in grays],
        motion=motion_group(clip, center_flow),
    )


def laplacian_blur_score(gray: np.ndarray) -> float:
    """Population variance of the 4-neighbor Laplacian response with
    replicated borders.  Sharper frames score higher."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2 or gray.shape[0] < 3 or gray.shape[1] < 3:
        raise DataError(f"blur score needs a 2D image >= 3x3, got {gray.shape}")
    p = np.pad(gray, 1, mode="edge")
    lap = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
           - 4.0 * gray)
    return float(lap.var())


def weights_from_variances(variances) -> np.ndarray:
    """Turn per-frame Laplacian variances into trust weights.

    Each variance is clamped to VARIANCE_FLOOR, inverted, and scaled so
    the weights sum to the frame count.  fsum keeps the denominator exact
    enough that identical variances give weights of exactly 1.0."""
    variances = [float(v) for v in variances]
    if not variances:
        raise DataError("need at least one variance")
    for v in variances:
        if not math.isfinite(v) or v < 0.0:
            raise DataError(f"variance must be finite and >= 0, got {v}")
    inv = [1.0 / max(v, VARIANCE_FLOOR) for v in variances]
    denom = math.fsum(inv)
    n = float(len(variances))
    return np.array([n * x / denom for x in inv])


def frame_variances(clip: FrameSequence) -> list:
    return [laplacian_blur_score(to_gray(f)) for f in clip.frames]


def blur_reasoning_vector(clip: FrameSequence) -> np.ndarray:
    """(5,) trust weights for a 5-frame clip, summing to 5."""
    if len(clip) != 5:
        raise DataError(f"blur reasoning expects a 5-frame clip, got {len(clip)}")
    return weights_from_variances(frame_variances(clip))
