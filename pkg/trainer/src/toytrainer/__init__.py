"""Desk-scale quantization-aware training for the spike-convertible transformer."""

from .config import ArchConfig, ConfigError, TrainConfig
from .data import Split, load_split
from .export import export_container, export_images, read_raw_image, write_raw_image
from .model import ActQuant, QatTransformer
from .train import TrainingDiverged, TrainResult, evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "ActQuant",
    "ArchConfig",
    "ConfigError",
    "QatTransformer",
    "Split",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "evaluate",
    "export_container",
    "export_images",
    "load_split",
    "predict",
    "read_raw_image",
    "train",
    "write_raw_image",
    "__version__",
]
