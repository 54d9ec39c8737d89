"""Transformer-feature perceptual losses with gradients to the input image.

A small ViT encoder with its own reverse-mode tape computes token, query,
key, and value features of an image; two perceptual terms (entry-wise local
difference and per-token sorted 1D transport distance) combine with a pixel
metric into a differentiable objective. Weights travel in the VPW1 container
format; analysis tools (self-similarity heatmaps, finite-difference gradient
checks, pixel-space descent) live behind the `vitpercep` CLI.
"""

from .autodiff import (Tape, Tensor, backward, layer_norm, matmul,
                       softmax_rows, sort_with_permutation)
from .encoder import (FeatureBundle, TokenMask, ViTConfig, WeightBundle,
                      apply_mask, embed, extract, forward_to_layer, patchify)
from .errors import (ContractError, CorruptionError, DimensionError,
                     FormatError, ImageDecodeError, NonFiniteError,
                     SchemaError, VitPercepError)
from .losses import (LossConfig, LossReport, deblur_loss, global_loss,
                     local_loss, loss_gradient, psnr, total_loss,
                     wasserstein_1d)
from .similarity import SimilarityMap, heatmap_delta, similarity_map
from .weights_io import generate_toy, load, save

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward", "layer_norm", "matmul", "softmax_rows",
    "sort_with_permutation",
    "FeatureBundle", "TokenMask", "ViTConfig", "WeightBundle",
    "apply_mask", "embed", "extract", "forward_to_layer", "patchify",
    "ContractError", "CorruptionError", "DimensionError", "FormatError",
    "ImageDecodeError", "NonFiniteError", "SchemaError", "VitPercepError",
    "LossConfig", "LossReport", "deblur_loss", "global_loss", "local_loss",
    "loss_gradient", "psnr", "total_loss", "wasserstein_1d",
    "SimilarityMap", "heatmap_delta", "similarity_map",
    "generate_toy", "load", "save",
    "__version__",
]
