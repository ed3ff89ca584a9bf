"""The deblurring network, desk-scale.

One clip in, one restored center frame out.  Five ingredients:

  * a per-frame feature extractor (two stride-2 convs, so features live
    at quarter resolution),
  * the blur reasoning vector, which rescales each frame's features by
    how much that frame can be trusted,
  * a 1x1 fusion conv that squeezes the five scaled feature maps into
    one,
  * a prior encoder: two grouped 3D convs over the (prior, frame, H, W)
    stack with spatial pooling, collapsing the frame axis, then a 1x1
    projection; its output gates the fused features elementwise,
  * channel-attention residual blocks and two nearest-neighbor x2
    upsample stages back to full resolution.

The output conv starts at zero, so an untrained model is exactly the
identity on the center frame (global residual connection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .flow import FlowField
from .media_io import FrameSequence
from .priors import blur_reasoning_vector, build_prior_stack
from .nn_core import (ConvSpec, Tensor, conv2d, conv3d, global_avg_pool,
                      load_checkpoint, maxpool2d, mul, relu, reshape,
                      save_checkpoint, sigmoid, stack, upsample_nearest2x)

WINDOW = 5


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 128
    blocks: int = 4
    reduction: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.blocks < 1 or self.reduction < 1:
            raise DataError("channels, blocks, and reduction must be >= 1")
        if self.channels % self.reduction:
            raise DataError(
                f"reduction {self.reduction} must divide channels {self.channels}")
        if self.seed < 0:
            raise DataError(f"seed must be >= 0, got {self.seed}")


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape)


class _Conv:
    """A convolution layer: spec plus learnable weights and bias.
    Weights draw from the fan-in uniform scheme; biases start at zero."""

    def __init__(self, spec: ConvSpec, rng, params: dict, name: str,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros(spec.weight_shape)
        else:
            w = kaiming_uniform(rng, spec.weight_shape, spec.fan_in)
        self.spec = spec
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(spec.out_channels), requires_grad=True)
        params[name + ".w"] = self.w
        params[name + ".b"] = self.b
        self._op = conv3d if len(spec.kernel) == 3 else conv2d

    def __call__(self, x: Tensor) -> Tensor:
        return self._op(x, self.spec, self.w, self.b)


class PriorEncoder:
    """(3, 5, H, W) prior stack -> (channels, H/4, W/4) feature map.

    Grouped 3D convs keep the three prior families separate while the
    frame axis shrinks 5 -> 3 -> 1 (kernel depth 3, no depth padding,
    one depth step lost per conv and none at the pools)."""

    def __init__(self, channels: int, rng, params: dict, prefix: str = "encoder"):
        self.conv1 = _Conv(ConvSpec(3, 9, (3, 5, 5), 1, (0, 2, 2), groups=3),
                           rng, params, prefix + ".conv1")
        self.conv2 = _Conv(ConvSpec(9, 27, (3, 5, 5), 1, (0, 2, 2), groups=9),
                           rng, params, prefix + ".conv2")
        self.fuse = _Conv(ConvSpec(27, channels, (1, 1), 1, (0, 0)),
                          rng, params, prefix + ".fuse")

    def __call__(self, prior_stack: Tensor) -> Tensor:
        d = prior_stack.data
        if d.ndim != 4 or d.shape[0] != 3 or d.shape[1] != WINDOW:
            raise DataError(
                f"prior stack must be (3, {WINDOW}, H, W), got {d.shape}")
        h, w = d.shape[2], d.shape[3]
        if h % 4 or w % 4:
            raise DataError(f"spatial dims must be multiples of 4, got {h}x{w}")
        x = relu(self.conv1(prior_stack))   # (9, 3, H, W)
        x = maxpool2d(x)                    # (9, 3, H/2, W/2)
        x = relu(self.conv2(x))             # (27, 1, H/2, W/2)
        x = maxpool2d(x)                    # (27, 1, H/4, W/4)
        x = reshape(x, (27, h // 4, w // 4))
        return relu(self.fuse(x))


class CaResBlock:
    """Residual block with a channel-attention gate: conv, relu, conv,
    then each channel is scaled by a sigmoid computed from its own
    global average through a squeeze-excite bottleneck."""

    def __init__(self, channels: int, reduction: int, rng, params: dict,
                 prefix: str):
        c, r = channels, reduction
        self.conv_a = _Conv(ConvSpec(c, c, (3, 3), 1, (1, 1)),
                            rng, params, prefix + ".conv_a")
        self.conv_b = _Conv(ConvSpec(c, c, (3, 3), 1, (1, 1)),
                            rng, params, prefix + ".conv_b")
        self.squeeze = _Conv(ConvSpec(c, c // r, (1, 1), 1, (0, 0)),
                             rng, params, prefix + ".squeeze")
        self.excite = _Conv(ConvSpec(c // r, c, (1, 1), 1, (0, 0)),
                            rng, params, prefix + ".excite")

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv_b(relu(self.conv_a(x)))
        s = global_avg_pool(h)
        gate = sigmoid(self.excite(relu(self.squeeze(s))))
        return x + mul(h, gate)


def apply_blur_vector(frame_feats: Tensor, weights: np.ndarray) -> Tensor:
    """Scale per-frame feature maps (5, C, h, w) by the 5 trust weights."""
    if frame_feats.data.ndim != 4 or frame_feats.data.shape[0] != WINDOW:
        raise DataError(
            f"expected ({WINDOW}, C, h, w) features, got {frame_feats.data.shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (WINDOW,):
        raise DataError(f"expected {WINDOW} weights, got shape {weights.shape}")
    return mul(frame_feats, Tensor(weights.reshape(WINDOW, 1, 1, 1)))


class PromotionModel:
    def __init__(self, config: ModelConfig = ModelConfig()):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.params = {}
        c = config.channels
        self.feat1 = _Conv(ConvSpec(3, c, (3, 3), 2, (1, 1)),
                           rng, self.params, "feat1")
        self.feat2 = _Conv(ConvSpec(c, c, (3, 3), 2, (1, 1)),
                           rng, self.params, "feat2")
        self.fuse = _Conv(ConvSpec(WINDOW * c, c, (1, 1), 1, (0, 0)),
                          rng, self.params, "fuse")
        self.encoder = PriorEncoder(c, rng, self.params)
        self.blocks = [
            CaResBlock(c, config.reduction, rng, self.params, f"block{i}")
            for i in range(config.blocks)
        ]
        self.up1 = _Conv(ConvSpec(c, c, (3, 3), 1, (1, 1)),
                         rng, self.params, "up1")
        self.up2 = _Conv(ConvSpec(c, c, (3, 3), 1, (1, 1)),
                         rng, self.params, "up2")
        self.out = _Conv(ConvSpec(c, 3, (3, 3), 1, (1, 1)),
                         rng, self.params, "out", zero_init=True)

    def extract_features(self, frame: Tensor) -> Tensor:
        """(3, H, W) -> (C, H/4, W/4)."""
        return relu(self.feat2(relu(self.feat1(frame))))

    def forward(self, frames: np.ndarray, prior_stack: np.ndarray,
                blur_vec: np.ndarray) -> Tensor:
        """frames (5, 3, H, W), prior stack (3, 5, H, W), blur vector (5,)
        -> restored center frame (3, H, W)."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[0] != WINDOW or frames.shape[1] != 3:
            raise DataError(
                f"frames must be ({WINDOW}, 3, H, W), got {frames.shape}")
        h, w = frames.shape[2], frames.shape[3]
        if h % 4 or w % 4:
            raise DataError(f"frame dims must be multiples of 4, got {h}x{w}")
        if np.asarray(prior_stack).shape != (3, WINDOW, h, w):
            raise DataError(
                f"prior stack must be (3, {WINDOW}, {h}, {w}), "
                f"got {np.asarray(prior_stack).shape}")
        feats = stack([self.extract_features(Tensor(frames[i]))
                       for i in range(WINDOW)])
        scaled = apply_blur_vector(feats, blur_vec)
        c = self.config.channels
        fused = relu(self.fuse(reshape(scaled, (WINDOW * c, h // 4, w // 4))))
        prior = self.encoder(Tensor(np.asarray(prior_stack, dtype=np.float64)))
        x = mul(fused, prior)
        for block in self.blocks:
            x = block(x)
        x = relu(self.up1(upsample_nearest2x(x)))
        x = relu(self.up2(upsample_nearest2x(x)))
        residual = self.out(x)
        return residual + Tensor(frames[WINDOW // 2])

    def run_clip(self, clip: FrameSequence, center_flow: FlowField) -> Tensor:
        frames, prior_stack, blur_vec = prepare_clip_inputs(clip, center_flow)
        return self.forward(frames, prior_stack, blur_vec)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def save(self, path, extra_meta: dict = None) -> None:
        meta = {
            "channels": self.config.channels,
            "blocks": self.config.blocks,
            "reduction": self.config.reduction,
            "seed": self.config.seed,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, meta, self.params)

    @classmethod
    def load(cls, path) -> "PromotionModel":
        meta, arrays = load_checkpoint(path)
        try:
            config = ModelConfig(
                channels=int(meta["channels"]),
                blocks=int(meta["blocks"]),
                reduction=int(meta["reduction"]),
                seed=int(meta.get("seed", 0)),
            )
        except KeyError as exc:
            raise DataError(f"{path}: checkpoint metadata missing {exc}")
        model = cls(config)
        missing = set(model.params) - set(arrays)
        extra = set(arrays) - set(model.params)
        if missing or extra:
            raise DataError(
                f"{path}: parameter set mismatch "
                f"(missing {sorted(missing)}, unexpected {sorted(extra)})")
        for name, tensor in model.params.items():
            if arrays[name].shape != tensor.data.shape:
                raise DataError(
                    f"{path}: {name} has shape {arrays[name].shape}, "
                    f"expected {tensor.data.shape}")
            tensor.data = arrays[name]
        return model


def frames_to_chw(clip: FrameSequence) -> np.ndarray:
    """(n, 3, H, W) float64 from a clip's (H, W, 3) frames."""
    return np.stack([np.moveaxis(f, 2, 0) for f in clip.frames])


def prepare_clip_inputs(clip: FrameSequence, center_flow: FlowField):
    """Everything forward() needs, computed from a 5-frame clip."""
    if len(clip) != WINDOW:
        raise DataError(f"model clips must have {WINDOW} frames, got {len(clip)}")
    frames = frames_to_chw(clip)
    prior_stack = build_prior_stack(clip, center_flow).tensor()
    blur_vec = blur_reasoning_vector(clip)
    return frames, prior_stack, blur_vec
