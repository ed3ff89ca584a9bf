"""Shared scene builders.

Every test scene is deterministic: either a closed-form pattern or a
seeded generator, so golden values stay frozen across runs.
"""

import numpy as np
import pytest

from promotion.media_io import FrameSequence


def stripe_scene(size=64, n=5, shift=4, period=16, seed=9):
    """Frames of wide vertical stripes translating `shift` px per frame.

    Stripes this wide survive quarter-resolution features, and the
    motion covers every pixel, which is what makes the scene learnable
    for the toy trainer.
    """
    yy, xx = np.mgrid[0:size, 0:size]
    frames = []
    for i in range(n):
        phase = (xx - shift * i) % period
        bright = (phase < period // 2).astype(float)
        r = 0.15 + 0.65 * bright
        g = 0.20 + 0.55 * bright * (0.6 + 0.4 * yy / size)
        b = 0.30 + 0.35 * (1.0 - bright)
        frames.append(np.clip(np.stack([r, g, b], axis=2), 0.0, 1.0))
    return FrameSequence(frames, n // 2)


def moving_edge_scene(size=16, n=5, shift=2):
    """A vertical dark/bright edge sweeping across a small frame."""
    frames = []
    for i in range(n):
        col = 4 + shift * i
        img = np.full((size, size), 0.2)
        img[:, col:] = 0.9
        frames.append(np.stack([img] * 3, axis=2))
    return FrameSequence(frames, n // 2)


def textured_scene(size=32, n=5, shift=(2, 1), seed=5):
    """Smooth random texture translating by an integer step per frame.

    Periodic (np.roll) motion, so block matching can recover the shift
    exactly everywhere.
    """
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.05, 0.95, (size, size, 3))
    # Smooth a little so blocks are locally distinctive but not noise.
    for _ in range(2):
        base = 0.5 * base + 0.25 * np.roll(base, 1, axis=0) \
            + 0.25 * np.roll(base, 1, axis=1)
    frames = [np.roll(base, (shift[0] * i, shift[1] * i), axis=(0, 1))
              for i in range(n)]
    return FrameSequence(frames, n // 2)


def random_frame(shape=(16, 16, 3), seed=0, lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, shape)


def conv2d_oracle(x, spec, w, b):
    """Direct-summation grouped 2D cross-correlation, nested loops only.

    Deliberately naive so it shares no code path with the package.
    """
    cin, h, width = x.shape
    kh, kw = spec.kernel
    ph, pw = spec.padding
    s = spec.stride
    cig = spec.in_channels // spec.groups
    cog = spec.out_channels // spec.groups
    xp = np.zeros((cin, h + 2 * ph, width + 2 * pw))
    xp[:, ph:ph + h, pw:pw + width] = x
    ho = (h + 2 * ph - kh) // s + 1
    wo = (width + 2 * pw - kw) // s + 1
    out = np.zeros((spec.out_channels, ho, wo))
    for oc in range(spec.out_channels):
        base = (oc // cog) * cig
        for oh in range(ho):
            for ow in range(wo):
                acc = b[oc]
                for ic in range(cig):
                    for dh in range(kh):
                        for dw in range(kw):
                            acc += (w[oc, ic, dh, dw]
                                    * xp[base + ic, oh * s + dh, ow * s + dw])
                out[oc, oh, ow] = acc
    return out


def conv3d_oracle(x, spec, w, b):
    """Direct-summation grouped 3D cross-correlation, nested loops only."""
    cin, d, h, width = x.shape
    kd, kh, kw = spec.kernel
    pd, ph, pw = spec.padding
    s = spec.stride
    cig = spec.in_channels // spec.groups
    cog = spec.out_channels // spec.groups
    xp = np.zeros((cin, d + 2 * pd, h + 2 * ph, width + 2 * pw))
    xp[:, pd:pd + d, ph:ph + h, pw:pw + width] = x
    do = (d + 2 * pd - kd) // s + 1
    ho = (h + 2 * ph - kh) // s + 1
    wo = (width + 2 * pw - kw) // s + 1
    out = np.zeros((spec.out_channels, do, ho, wo))
    for oc in range(spec.out_channels):
        base = (oc // cog) * cig
        for od in range(do):
            for oh in range(ho):
                for ow in range(wo):
                    acc = b[oc]
                    for ic in range(cig):
                        for dd in range(kd):
                            for dh in range(kh):
                                for dw in range(kw):
                                    acc += (w[oc, ic, dd, dh, dw]
                                            * xp[base + ic, od * s + dd,
                                                 oh * s + dh, ow * s + dw])
                    out[oc, od, oh, ow] = acc
    return out


@pytest.fixture
def stripes():
    return stripe_scene()


@pytest.fixture
def moving_edge():
    return moving_edge_scene()
