"""Multi-pattern attention-aware multiple instance learning for WSI feature bags."""

from stamp_mil.data import (
    DatasetIndex,
    FormatError,
    InstanceBag,
    SynthConfig,
    bag_label_from_instances,
    generate_synthetic_dataset,
    read_bag,
    split_dataset,
    write_bag,
)
from stamp_mil.model import ModelConfig, Prediction, StampModel

__all__ = [
    "DatasetIndex",
    "FormatError",
    "InstanceBag",
    "ModelConfig",
    "Prediction",
    "StampModel",
    "SynthConfig",
    "bag_label_from_instances",
    "generate_synthetic_dataset",
    "read_bag",
    "split_dataset",
    "write_bag",
]

__version__ = "0.1.0"
