"""Prior-guided, motion-aware video deblurring at desk scale."""

from .errors import DataError, UsageError
from .media_io import (FrameSequence, load_frame, load_sequence, save_frame,
                       save_sequence, to_gray, window_clips)
from .priors import (PriorStack, blur_reasoning_vector, build_prior_stack,
                     contrast_map, gradient_map, laplacian_blur_score,
                     motion_group, weights_from_variances)
from .flow import (FlowField, attention_map, estimate_flow_coarse,
                   flow_to_color, make_colorwheel, read_flo, write_flo)
from .synthesis import (CrfParams, SynthSpec, crf_apply, crf_invert,
                        interpolate_virtual, synthesize_blur, virtual_timeline)
from .nn_core import (ConvSpec, Tensor, conv2d, conv3d, grad_check,
                      load_checkpoint, maxpool2d, save_checkpoint)
from .model import (CaResBlock, ModelConfig, PriorEncoder, PromotionModel,
                    apply_blur_vector, prepare_clip_inputs)
from .loss_metrics import (LossWeights, PerceptualExtractor, charbonnier_flow,
                           perceptual_distance, psnr, ssim, total_loss)

__version__ = "0.1.0"

__all__ = [
    "DataError", "UsageError",
    "FrameSequence", "load_frame", "load_sequence", "save_frame",
    "save_sequence", "to_gray", "window_clips",
    "PriorStack", "blur_reasoning_vector", "build_prior_stack",
    "contrast_map", "gradient_map", "laplacian_blur_score", "motion_group",
    "weights_from_variances",
    "FlowField", "attention_map", "estimate_flow_coarse", "flow_to_color",
    "make_colorwheel", "read_flo", "write_flo",
    "CrfParams", "SynthSpec", "crf_apply", "crf_invert",
    "interpolate_virtual", "synthesize_blur", "virtual_timeline",
    "ConvSpec", "Tensor", "conv2d", "conv3d", "grad_check",
    "load_checkpoint", "maxpool2d", "save_checkpoint",
    "CaResBlock", "ModelConfig", "PriorEncoder", "PromotionModel",
    "apply_blur_vector", "prepare_clip_inputs",
    "LossWeights", "PerceptualExtractor", "charbonnier_flow",
    "perceptual_distance", "psnr", "ssim", "total_loss",
    "__version__",
]
