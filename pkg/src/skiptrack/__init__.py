"""NumPy engine for a layer-skipping single-stream ViT tracker.

The backbone runs blocks ``1..l_star`` and then exactly one deeper block
chosen by a small MLP selector. Search features are re-weighted by grouped
coordinate attention (GGCA) before a convolutional head predicts the box.
Occlusion masks for template images and a benchmark harness complete the
package.
"""

from .backbone import (LayerFeatures, flop_estimate, forward_all, forward_prefix, forward_skip,
                       patch_embed)
from .bench import BenchReport, bench_forward, interleaved_throughput
from .config import GgcaConfig, ModelConfig
from .errors import (BadMagicError, ConfigError, DegenerateInputError, DuplicateNameError,
                     FrameFormatError, ShapeError, TrailingBytesError, TruncatedFileError,
                     UnsupportedVersionError, WeightFileError)
from .ggca import ggca_forward, ggca_param_count
from .masking import (MaskConfig, MaskPattern, SplitMix64, apply_mask, cox_intensity, cox_mask,
                      mask_statistics, orr_diagnostic, orr_loss, uniform_mask)
from .model import Model, init_model, required_shapes
from .selector import (SelectorMlp, finite_difference_check, mlp_gradients, select_layer, sim_loss,
                       similarity_labels, train_selector)
from .tracker import BoundingBox, TrackerSettings, TrackState, init_track, track_step
from .weightio import load_dataset, load_weights, save_dataset, save_weights

__version__ = "0.1.0"

__all__ = [
    "BadMagicError", "BenchReport", "BoundingBox", "ConfigError", "DegenerateInputError",
    "DuplicateNameError", "FrameFormatError", "GgcaConfig", "LayerFeatures", "MaskConfig",
    "MaskPattern", "Model", "ModelConfig", "SelectorMlp", "ShapeError", "SplitMix64",
    "TrackState", "TrackerSettings", "TrailingBytesError", "TruncatedFileError",
    "UnsupportedVersionError", "WeightFileError", "apply_mask", "bench_forward", "cox_intensity", "interleaved_throughput",
    "cox_mask", "finite_difference_check", "flop_estimate", "forward_all", "forward_prefix",
    "forward_skip", "ggca_forward", "ggca_param_count", "init_model", "init_track",
    "load_dataset", "load_weights", "mask_statistics", "mlp_gradients", "orr_diagnostic",
    "orr_loss", "patch_embed", "required_shapes", "save_dataset", "save_weights",
    "select_layer", "sim_loss", "similarity_labels", "track_step", "train_selector",
    "uniform_mask",
]
