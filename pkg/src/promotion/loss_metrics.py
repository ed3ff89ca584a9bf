"""Training losses and image quality metrics.

The restoration loss is a Charbonnier penalty whose residuals are
amplified by (1 + w) with w an attention map in [0, 1], so errors inside
moving regions cost up to twice as much as errors in static ones.  A
small fixed random conv stack stands in for a pretrained feature network
and supplies the perceptual term.  PSNR and SSIM operate on the 0..255
scale like every published table does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError
from .nn_core import (ConvSpec, Tensor, as_tensor, conv2d, mean_all,
                      pow_scalar, relu, sqrt, sum_axis)

_PERCEPTUAL_SEED = 8191
_PERCEPTUAL_PLAN = ((3, 8), (8, 16), (16, 32), (32, 64))
_NORM_DELTA = 1e-10


@dataclass(frozen=True)
class LossWeights:
    """lam scales the perceptual term; epsilon smooths the Charbonnier
    penalty near zero."""

    lam: float = 0.1
    epsilon: float = 1e-6

    def __post_init__(self):
        if not math.isfinite(self.lam) or self.lam < 0.0:
            raise DataError(f"lambda must be finite and >= 0, got {self.lam}")
        if not math.isfinite(self.epsilon) or self.epsilon <= 0.0:
            raise DataError(f"epsilon must be finite and > 0, got {self.epsilon}")


def charbonnier_flow(pred, target, attention, weights: LossWeights = LossWeights()) -> Tensor:
    """mean(sqrt(((pred - target) * (1 + attention))^2 + epsilon)) over
    a (3, H, W) pair.  attention is (H, W) and broadcasts over channels."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target,
                        dtype=np.float64)
    attention = np.asarray(attention, dtype=np.float64)
    if pred.data.ndim != 3 or pred.data.shape[0] != 3:
        raise DataError(f"pred must be (3, H, W), got {pred.data.shape}")
    if target.shape != pred.data.shape:
        raise DataError(
            f"target shape {target.shape} does not match pred {pred.data.shape}")
    if attention.shape != pred.data.shape[1:]:
        raise DataError(
            f"attention shape {attention.shape} does not match "
            f"spatial dims {pred.data.shape[1:]}")
    amp = Tensor((1.0 + attention)[None, :, :])
    d = (pred - Tensor(target)) * amp
    return mean_all(sqrt(d * d + weights.epsilon))


class PerceptualExtractor:
    """Four fixed random conv stages (3x3, stride 2, relu), each followed
    by per-pixel channel unit-normalization.  The weights come from a
    dedicated seeded generator, never train, and do not depend on any
    run seed, so the perceptual distance is a stable function."""

    def __init__(self, seed: int = _PERCEPTUAL_SEED):
        rng = np.random.default_rng(seed)
        self.stages = []
        for cin, cout in _PERCEPTUAL_PLAN:
            spec = ConvSpec(cin, cout, (3, 3), 2, (1, 1))
            w = rng.normal(0.0, np.sqrt(2.0 / spec.fan_in),
                           size=spec.weight_shape)
            self.stages.append(
                (spec, Tensor(w), Tensor(np.zeros(cout))))

    def features(self, x) -> list:
        """Normalized feature maps of a (3, H, W) image, one per stage."""
        h = as_tensor(x)
        if h.data.ndim != 3 or h.data.shape[0] != 3:
            raise DataError(f"expected a (3, H, W) image, got {h.data.shape}")
        feats = []
        for spec, w, b in self.stages:
            h = relu(conv2d(h, spec, w, b))
            norm = pow_scalar(sum_axis(h * h, 0) + _NORM_DELTA, -0.5)
            feats.append(h * norm)
        return feats


_default_extractor = None


def default_extractor() -> PerceptualExtractor:
    global _default_extractor
    if _default_extractor is None:
        _default_extractor = PerceptualExtractor()
    return _default_extractor


def perceptual_from_features(feats_a: list, feats_b: list) -> Tensor:
    """Mean over stages of the mean squared difference between normalized
    features.  Precomputing the target's features once per training run
    avoids re-extracting a constant."""
    if len(feats_a) != len(feats_b):
        raise DataError("feature lists must have equal length")
    total = None
    for fa, fb in zip(feats_a, feats_b):
        d = fa - fb
        term = mean_all(d * d)
        total = term if total is None else total + term
    return total * (1.0 / len(feats_a))


def perceptual_distance(pred, target, extractor: PerceptualExtractor = None) -> Tensor:
    ext = extractor if extractor is not None else default_extractor()
    target = target.detach() if isinstance(target, Tensor) else as_tensor(target)
    return perceptual_from_features(ext.features(pred), ext.features(target))


def total_loss(pred, target, attention, weights: LossWeights = LossWeights(),
               extractor: PerceptualExtractor = None) -> Tensor:
    """Charbonnier + lam * perceptual.  With lam == 0 the perceptual
    stage never runs and the value is exactly the Charbonnier term."""
    cb = charbonnier_flow(pred, target, attention, weights)
    if weights.lam == 0.0:
        return cb
    return cb + weights.lam * perceptual_distance(pred, target, extractor)


def _to_metric_array(img) -> np.ndarray:
    """Accept uint8 arrays or floats already on the 0..255 scale."""
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64)
    arr = arr.astype(np.float64)
    if not np.isfinite(arr).all():
        raise DataError("image contains non-finite values")
    return arr


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over all channels jointly,
    peak 255.  Identical images return the 100 dB cap."""
    a = _to_metric_array(a)
    b = _to_metric_array(b)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 100.0
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode filtering with an odd symmetric kernel."""
    size = kernel.shape[0]
    out = sliding_window_view(img, size, axis=0) @ kernel
    return sliding_window_view(out, size, axis=1) @ kernel


def _to_luma_255(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3 and img.shape[2] == 3:
        r, g, b = img[..., 0], img[..., 1], img[..., 2]
        return (299.0 * r + 587.0 * g + 114.0 * b) / 1000.0
    if img.ndim == 2:
        return img
    raise DataError(f"expected (H, W) or (H, W, 3), got shape {img.shape}")


def ssim(a, b) -> float:
    """Structural similarity on luma, 0..255 scale: 11x11 Gaussian window
    (sigma 1.5), valid mode, K1 = 0.01, K2 = 0.03."""
    a = _to_luma_255(_to_metric_array(a))
    b = _to_luma_255(_to_metric_array(b))
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise DataError(f"ssim needs at least 11x11 images, got {a.shape}")
    kernel = _gaussian_kernel()
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    mu_a = _filter_valid(a, kernel)
    mu_b = _filter_valid(b, kernel)
    var_a = _filter_valid(a * a, kernel) - mu_a * mu_a
    var_b = _filter_valid(b * b, kernel) - mu_b * mu_b
    cov = _filter_valid(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
