"""Conversion of quantized, normalizer-free transformers into spiking networks.

The package splits into an analog half (model, quant, tensor_ops), a
conversion layer (convert), a spiking simulator (engine), verification
utilities (verify), and serialization (store).
"""

from .convert import SpikingModel, absorb_scale, annotate_tdec, convert, fold_all_bn, map_thresholds
from .engine import dif_run, run_snn, tdec_matmul, tdec_maxpool
from .errors import (BlobError, ConfigError, ContainerError, ContractError,
                     ConversionError, IncompleteModelError, ManifestError,
                     NumericError, ShapeError)
from .model import ModelConfig, TransformerModel, build_model, forward, nrelu
from .quant import BNParams, QuantParams, fold_bn, lsq, qcfs, round_half_up
from .store import load, read_raw_image, save, write_raw_image
from .verify import (check_tdec_properties, compare_ann_snn, spike_stats,
                     sweep_delay)

__version__ = "0.1.0"

__all__ = [
    "BNParams", "BlobError", "ConfigError", "ContainerError", "ContractError",
    "ConversionError", "IncompleteModelError", "ManifestError", "ModelConfig",
    "NumericError", "QuantParams", "ShapeError", "SpikingModel",
    "TransformerModel", "absorb_scale", "annotate_tdec", "build_model",
    "check_tdec_properties", "compare_ann_snn", "convert", "dif_run",
    "fold_all_bn", "fold_bn", "forward", "load", "lsq", "map_thresholds",
    "nrelu", "qcfs", "read_raw_image", "round_half_up", "run_snn", "save",
    "spike_stats", "sweep_delay", "tdec_matmul", "tdec_maxpool",
    "write_raw_image",
]
