"""Feedback-aided transformer source-channel coding of images.

The package covers the full loop: patch embedding of the source image,
block-wise transmission over a simulated noisy channel, channel-output
feedback folded into the next block's encoder input, and a transformer
decoder reconstructing the image from everything received so far.
"""

from .baselines import (awgn_capacity, bpg_capacity_bound,
                        broadcast_feedback_region, convex_hull, hull_contains)
from .channel import ChannelConfig, forward_channel, power_normalize
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .decoder import Decoder, decode, transmitter_belief
from .encoder import Encoder, EncoderState, FeedbackMode, encode_block
from .errors import (ConfigError, DegenerateInput, DimensionError,
                     DivergenceError, DomainError, FbjsccError, FormatError,
                     HookMissing, ModeError, PluginMissing, SequenceError,
                     ShapeError)
from .imaging import PatchSpec, load_dataset, patchify, unpatchify
from .metrics import identity_extractor, lpips, psnr, psnr_per_image
from .nn_core import ModelSpec
from .protocol import (BroadcastConfig, BroadcastModel, PointToPointModel,
                       SessionConfig, TransmissionTrace, build_broadcast,
                       build_point_to_point, evaluate_point_to_point,
                       run_broadcast_session, run_session, run_variable_rate)
from .seeding import derive_seed, generator
from .stats import flops_estimate, parameter_count
from .training import LossSpec, SnrStrategy, TrainConfig, train_loop

__version__ = "0.1.0"

__all__ = [
    "BroadcastConfig",
    "BroadcastModel",
    "ChannelConfig",
    "ConfigError",
    "Decoder",
    "DegenerateInput",
    "DimensionError",
    "DivergenceError",
    "DomainError",
    "Encoder",
    "EncoderState",
    "FbjsccError",
    "FeedbackMode",
    "FormatError",
    "HookMissing",
    "LossSpec",
    "ModeError",
    "ModelSpec",
    "PatchSpec",
    "PluginMissing",
    "PointToPointModel",
    "SequenceError",
    "SessionConfig",
    "ShapeError",
    "SnrStrategy",
    "TrainConfig",
    "TransmissionTrace",
    "awgn_capacity",
    "bpg_capacity_bound",
    "broadcast_feedback_region",
    "build_broadcast",
    "build_point_to_point",
    "convex_hull",
    "decode",
    "derive_seed",
    "encode_block",
    "evaluate_point_to_point",
    "flops_estimate",
    "forward_channel",
    "generator",
    "hull_contains",
    "identity_extractor",
    "load_checkpoint",
    "load_dataset",
    "lpips",
    "parameter_count",
    "patchify",
    "power_normalize",
    "psnr",
    "psnr_per_image",
    "restore_model",
    "run_broadcast_session",
    "run_session",
    "run_variable_rate",
    "save_checkpoint",
    "train_loop",
    "transmitter_belief",
    "unpatchify",
]
