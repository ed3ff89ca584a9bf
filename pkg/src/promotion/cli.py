"""Command-line interface.

Subcommands cover the pipeline end to end: prior maps, blur reasoning
vectors, coarse flow, blur synthesis, quality metrics, a toy trainer,
and inference.  Exit codes: 0 on success, 1 for usage errors, 2 for
data errors.

Options may also come from a config file of `key = value` lines (# for
comments); explicit flags win over the file, the file wins over
defaults.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .flow import (attention_map, estimate_flow_coarse, flow_to_color,
                   read_flo, write_flo)
from .loss_metrics import (LossWeights, charbonnier_flow, default_extractor,
                           perceptual_from_features, psnr, ssim)
from .media_io import (FrameSequence, atomic_write_bytes, list_frames,
                       load_frame, load_sequence, save_frame, save_gray,
                       save_sequence, to_gray)
from .model import ModelConfig, PromotionModel, prepare_clip_inputs
from .nn_core import Tensor
from .priors import build_prior_stack, frame_variances, weights_from_variances
from .synthesis import CrfParams, SynthSpec, synthesize_blur
from . import media_io


@dataclass
class RunConfig:
    """Every tunable the CLI understands, with desk-scale defaults."""

    window: int = 5
    seed: int = 0
    channels: int = 32
    blocks: int = 2
    reduction: int = 8
    steps: int = 500
    lr: float = 1e-3
    loss_lambda: float = 0.1
    gamma: float = 2.2
    rate_multiplier: int = 8
    average_count: int = 8
    block: int = 16
    radius: int = 8
    crop: int = 0
    # "estimator" runs block matching; anything else is a directory of
    # .flo files named after each clip's center frame.
    flow_source: str = "estimator"


# Config file key -> (RunConfig field, parser).  "lambda" is a Python
# keyword, hence the one renamed field.
_CONFIG_KEYS = {
    "window": ("window", int),
    "seed": ("seed", int),
    "channels": ("channels", int),
    "blocks": ("blocks", int),
    "reduction": ("reduction", int),
    "steps": ("steps", int),
    "lr": ("lr", float),
    "lambda": ("loss_lambda", float),
    "gamma": ("gamma", float),
    "rate_multiplier": ("rate_multiplier", int),
    "average_count": ("average_count", int),
    "block": ("block", int),
    "radius": ("radius", int),
    "crop": ("crop", int),
    "flow_source": ("flow_source", str),
}


def parse_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _CONFIG_KEYS:
            raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
        field_name, cast = _CONFIG_KEYS[key]
        try:
            values[field_name] = cast(raw)
        except ValueError:
            raise DataError(
                f"{path}:{lineno}: bad value {raw!r} for {key} "
                f"(expected {cast.__name__})")
    return values


def build_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        for name, value in parse_config_file(args.config).items():
            setattr(cfg, name, value)
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            setattr(cfg, f.name, flag)
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _center_flow(clip: FrameSequence, cfg: RunConfig, stem: str = None):
    """Flow for a clip's center frame: estimated from the next frame, or
    read from <flow_source>/<stem>.flo when the config points at a
    directory of precomputed fields."""
    if cfg.flow_source != "estimator":
        if stem is None:
            raise DataError("this command cannot take flow from files")
        field = read_flo(Path(cfg.flow_source) / f"{stem}.flo")
        if field.shape != clip.frames[0].shape[:2]:
            raise DataError(
                f"flow for {stem} is {field.shape[0]}x{field.shape[1]}, "
                f"frames are {clip.height}x{clip.width}")
        return field
    c = clip.center_index
    return estimate_flow_coarse(
        to_gray(clip.frames[c]), to_gray(clip.frames[min(c + 1, len(clip) - 1)]),
        block=cfg.block, radius=cfg.radius)


def cmd_priors(args) -> int:
    cfg = build_config(args)
    seq = load_sequence(args.input_dir)
    names = [p.stem for p in list_frames(args.input_dir)]
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = media_io.window_clips(seq, cfg.window)
    for name, clip in zip(names, clips):
        stack = build_prior_stack(clip, _center_flow(clip, cfg, name))
        for group_name, group in (("contrast", stack.contrast),
                                  ("gradient", stack.gradient),
                                  ("motion", stack.motion)):
            for i, m in enumerate(group):
                save_gray(out_dir / f"{name}_{group_name}{i}.png", m)
    print(f"wrote {3 * cfg.window * len(clips)} prior maps to {out_dir}")
    return 0


def cmd_blurvec(args) -> int:
    cfg = build_config(args)
    seq = load_sequence(args.input_dir)
    names = [p.name for p in list_frames(args.input_dir)]
    if cfg.window != 5:
        raise DataError(f"blur reasoning is defined for window 5, got {cfg.window}")
    for name, clip in zip(names, media_io.window_clips(seq, cfg.window)):
        variances = frame_variances(clip)
        weights = weights_from_variances(variances)
        print(json.dumps({
            "frame": name,
            "variances": [float(v) for v in variances],
            "weights": [float(w) for w in weights],
        }))
    return 0


def cmd_flow(args) -> int:
    cfg = build_config(args)
    a = to_gray(load_frame(args.frame_a))
    b = to_gray(load_frame(args.frame_b))
    field = estimate_flow_coarse(a, b, block=cfg.block, radius=cfg.radius)
    write_flo(args.output, field)
    if args.color:
        save_frame(args.color, flow_to_color(field))
    mags = field.magnitude()
    print(f"wrote {args.output} (mean |flow| {float(mags.mean()):.3f} px, "
          f"max {float(mags.max()):.3f} px)")
    return 0


def cmd_synth(args) -> int:
    cfg = build_config(args)
    seq = load_sequence(args.input_dir)
    names = [p.name for p in list_frames(args.input_dir)]
    blurred = synthesize_blur(
        seq,
        SynthSpec(rate_multiplier=cfg.rate_multiplier,
                  average_count=cfg.average_count),
        CrfParams(gamma=cfg.gamma))
    save_sequence(args.output_dir, blurred, names)
    print(f"wrote {len(blurred)} blurred frames to {args.output_dir}")
    return 0


def cmd_metrics(args) -> int:
    pred_paths = list_frames(args.pred_dir)
    gt_paths = list_frames(args.gt_dir)
    if len(pred_paths) != len(gt_paths):
        raise DataError(
            f"{len(pred_paths)} predictions vs {len(gt_paths)} references")
    per_frame = []
    for p, g in zip(pred_paths, gt_paths):
        a = media_io.encode_frame(load_frame(p))
        b = media_io.encode_frame(load_frame(g))
        per_frame.append({"name": p.name, "psnr": psnr(a, b), "ssim": ssim(a, b)})
    report = {
        "psnr_mean": float(np.mean([x["psnr"] for x in per_frame])),
        "ssim_mean": float(np.mean([x["ssim"] for x in per_frame])),
        "per_frame": per_frame,
    }
    text = json.dumps(report, indent=2)
    print(text)
    if args.output:
        atomic_write_bytes(args.output, (text + "\n").encode("utf-8"))
    return 0


def train_toy(blur_dir, sharp_dir, ckpt_path, csv_path, cfg: RunConfig) -> dict:
    """Overfit the model to one clip: the centered window of the blurred
    sequence against the matching sharp center frame.  Plain gradient
    descent with a fixed step; losses for every step land in a CSV."""
    if cfg.window != 5:
        raise DataError(f"training is defined for window 5, got {cfg.window}")
    blur = load_sequence(blur_dir)
    sharp = load_sequence(sharp_dir)
    if len(blur) != len(sharp):
        raise DataError(
            f"{len(blur)} blurred frames vs {len(sharp)} sharp frames")
    if cfg.crop:
        if cfg.crop % 4:
            raise DataError(f"crop must be a multiple of 4, got {cfg.crop}")
        blur = _center_crop(blur, cfg.crop)
        sharp = _center_crop(sharp, cfg.crop)
    if blur.height % 4 or blur.width % 4:
        raise DataError(
            f"frame dims must be multiples of 4, got "
            f"{blur.height}x{blur.width} (use --crop)")
    clip = media_io.window_clips(blur, cfg.window)[blur.center_index]
    target = np.moveaxis(sharp.center, 2, 0)
    stem = list_frames(blur_dir)[blur.center_index].stem
    flow = _center_flow(clip, cfg, stem)
    attention = attention_map(flow)
    frames, prior_stack, blur_vec = prepare_clip_inputs(clip, flow)
    model = PromotionModel(ModelConfig(
        channels=cfg.channels, blocks=cfg.blocks,
        reduction=cfg.reduction, seed=cfg.seed))
    weights = LossWeights(lam=cfg.loss_lambda)
    extractor = default_extractor() if weights.lam > 0.0 else None
    target_feats = (extractor.features(Tensor(target))
                    if extractor is not None else None)
    rows = []
    for step in range(1, cfg.steps + 1):
        model.zero_grad()
        pred = model.forward(frames, prior_stack, blur_vec)
        cb = charbonnier_flow(pred, target, attention, weights)
        if extractor is not None:
            ps = perceptual_from_features(extractor.features(pred), target_feats)
            loss = cb + weights.lam * ps
            ps_val = float(ps.data)
        else:
            loss = cb
            ps_val = 0.0
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise DataError(f"non-finite loss at step {step}; lower --lr")
        loss.backward()
        for p in model.params.values():
            if p.grad is not None:
                p.data = p.data - cfg.lr * p.grad
        rows.append((step, loss_val, float(cb.data), ps_val))
    model.save(ckpt_path, extra_meta={
        "window": cfg.window, "lambda": cfg.loss_lambda,
        "lr": cfg.lr, "steps": cfg.steps})
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["step", "total", "charbonnier", "perceptual"])
    for row in rows:
        writer.writerow([row[0], f"{row[1]:.12g}", f"{row[2]:.12g}",
                         f"{row[3]:.12g}"])
    atomic_write_bytes(csv_path, buf.getvalue().encode("utf-8"))
    return {"first_loss": rows[0][1], "final_loss": rows[-1][1]}


def _center_crop(seq: FrameSequence, size: int) -> FrameSequence:
    if seq.height < size or seq.width < size:
        raise DataError(
            f"cannot crop {seq.height}x{seq.width} frames to {size}x{size}")
    top = (seq.height - size) // 2
    left = (seq.width - size) // 2
    return FrameSequence(
        [f[top:top + size, left:left + size].copy() for f in seq.frames],
        seq.center_index)


def cmd_train_toy(args) -> int:
    cfg = build_config(args)
    stats = train_toy(args.blur_dir, args.sharp_dir, args.ckpt, args.loss_csv,
                      cfg)
    print(f"step 1 loss {stats['first_loss']:.6f}, "
          f"step {cfg.steps} loss {stats['final_loss']:.6f}")
    print(f"checkpoint: {args.ckpt}")
    return 0


def cmd_infer(args) -> int:
    cfg = build_config(args)
    seq = load_sequence(args.input_dir)
    names = [p.name for p in list_frames(args.input_dir)]
    model = PromotionModel.load(args.ckpt)
    if seq.height % 4 or seq.width % 4:
        raise DataError(
            f"frame dims must be multiples of 4, got {seq.height}x{seq.width}")
    outputs = []
    clips = media_io.window_clips(seq, 5)
    for name, clip in zip(names, clips):
        pred = model.run_clip(clip, _center_flow(clip, cfg, Path(name).stem))
        outputs.append(np.moveaxis(np.clip(pred.data, 0.0, 1.0), 0, 2))
    save_sequence(args.output_dir, FrameSequence(outputs, seq.center_index),
                  names)
    print(f"wrote {len(outputs)} restored frames to {args.output_dir}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="promotion",
                     description="Prior-guided video deblurring toolkit.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def add_common(p, flow_flags=True):
        p.add_argument("--config", help="key = value options file")
        p.add_argument("--seed", type=int, help="RNG seed (bit-determinism)")
        if flow_flags:
            p.add_argument("--block", type=int, help="flow block size")
            p.add_argument("--radius", type=int, help="flow search radius")

    def add_flow_source(p):
        p.add_argument("--flow-source", dest="flow_source",
                       help='"estimator" or a directory of <frame>.flo files')

    p = sub.add_parser("priors", help="write prior maps as PNGs")
    p.add_argument("--in", dest="input_dir", required=True)
    p.add_argument("--out", dest="output_dir", required=True)
    p.add_argument("--window", type=int)
    add_common(p)
    add_flow_source(p)
    p.set_defaults(handler=cmd_priors)

    p = sub.add_parser("blurvec", help="print blur reasoning vectors as JSON")
    p.add_argument("--in", dest="input_dir", required=True)
    add_common(p, flow_flags=False)
    p.set_defaults(handler=cmd_blurvec)

    p = sub.add_parser("flow", help="estimate coarse flow between two frames")
    p.add_argument("--a", dest="frame_a", required=True)
    p.add_argument("--b", dest="frame_b", required=True)
    p.add_argument("--out", dest="output", required=True,
                   help="output .flo path")
    p.add_argument("--color", help="also save a color-coded PNG here")
    add_common(p)
    p.set_defaults(handler=cmd_flow)

    p = sub.add_parser("synth", help="synthesize motion blur")
    p.add_argument("--in", dest="input_dir", required=True)
    p.add_argument("--out", dest="output_dir", required=True)
    p.add_argument("--up", dest="rate_multiplier", type=int,
                   help="virtual frames per input interval")
    p.add_argument("--m", dest="average_count", type=int,
                   help="virtual frames averaged per output")
    p.add_argument("--gamma", type=float)
    add_common(p, flow_flags=False)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two frame folders")
    p.add_argument("--pred", dest="pred_dir", required=True)
    p.add_argument("--gt", dest="gt_dir", required=True)
    p.add_argument("--out", dest="output", help="also write the JSON here")
    add_common(p, flow_flags=False)
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("train-toy", help="overfit one clip, desk scale")
    p.add_argument("--blur", dest="blur_dir", required=True)
    p.add_argument("--sharp", dest="sharp_dir", required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint output path")
    p.add_argument("--loss-csv", dest="loss_csv", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda", dest="loss_lambda", type=float)
    p.add_argument("--channels", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--reduction", type=int)
    p.add_argument("--crop", type=int, help="center-crop frames first")
    add_common(p)
    add_flow_source(p)
    p.set_defaults(handler=cmd_train_toy)

    p = sub.add_parser("infer", help="restore a frame folder")
    p.add_argument("--in", dest="input_dir", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", dest="output_dir", required=True)
    add_common(p)
    add_flow_source(p)
    p.set_defaults(handler=cmd_infer)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def script_main():
    raise SystemExit(main())


if __name__ == "__main__":
    script_main()
