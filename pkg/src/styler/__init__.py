"""Coarse-to-fine structure-aware artistic style transfer.

A Coarse Network transfers global style at half resolution through a
single-level whitening/coloring transform and hands three reconstructed
multi-scale features to a Fine Network, which fuses them into the
full-resolution stylization through channel-attention Structural Selective
Fusion modules. Includes the full loss suite, two-stage trainer, evaluation
kit and a `styler` CLI.
"""

from .archive import TensorArchive, write_archive
from .coarse import (
    CoarseDecoder,
    CoarseTaps,
    coarse_forward,
    coarse_stylize,
    load_coarse_checkpoint,
    reconstruct_only,
    save_coarse_checkpoint,
)
from .encoder import TAP_NAMES, EncoderProfile, VggEncoder, build_encoder
from .errors import (
    ArchiveError,
    ConfigError,
    ImageIOError,
    InvalidInputError,
    NumericAbort,
    StylerError,
)
from .evalkit import BenchResult, SsimConfig, bench_stylize, perceptual_distance, ssim
from .fine import (
    FineNetwork,
    StylePipeline,
    fine_forward,
    fine_forward_nocoarse,
    load_fine_checkpoint,
    save_fine_checkpoint,
    stylize,
)
from .losses import (
    LayerAssignment,
    LossWeights,
    RemdConfig,
    cost_matrix,
    gram_loss,
    gram_matrix,
    meanvar_loss,
    perceptual_loss,
    reconstruction_loss,
    remd_loss,
    total_loss,
)
from .ssf import SsfModule, concat_fusion, ssf_forward
from .substrate import (
    DatasetCursor,
    covariance,
    downsample2,
    finite_diff_grad,
    load_image,
    resize,
    save_image,
    sym_eig,
)
from .trainer import TrainConfig, ablate, load_config, read_loss_csv, train_coarse, train_fine
from .wct import WctConfig, color, wct_transform, whiten

__version__ = "0.1.0"

__all__ = [
    "ArchiveError", "BenchResult", "CoarseDecoder", "CoarseTaps", "ConfigError",
    "DatasetCursor", "EncoderProfile", "FineNetwork", "ImageIOError",
    "InvalidInputError", "LayerAssignment", "LossWeights", "NumericAbort",
    "RemdConfig", "SsfModule", "SsimConfig", "StylePipeline", "StylerError", "TAP_NAMES",
    "TensorArchive", "TrainConfig", "VggEncoder", "WctConfig", "ablate",
    "bench_stylize", "build_encoder", "coarse_forward", "coarse_stylize", "color",
    "concat_fusion", "cost_matrix", "covariance", "downsample2", "fine_forward",
    "fine_forward_nocoarse", "finite_diff_grad", "gram_loss", "gram_matrix",
    "load_coarse_checkpoint", "load_config", "load_fine_checkpoint", "load_image",
    "meanvar_loss", "perceptual_distance", "perceptual_loss", "read_loss_csv",
    "reconstruction_loss", "reconstruct_only", "remd_loss", "resize",
    "save_coarse_checkpoint", "save_fine_checkpoint", "save_image", "ssf_forward",
    "ssim", "stylize", "sym_eig", "total_loss", "train_coarse", "train_fine",
    "wct_transform", "whiten", "write_archive",
]
