"""Prostate-style segmentation from one annotated slice per volume.

Pseudo labels for the unannotated slices come from two sources, a
self-trained segmenter and registration-based label propagation, and are
intersected before training the final network.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .data import CentralAnnotation, PhantomSpec, Volume, generate_phantom, read_metaimage, write_metaimage
from .exceptions import (
    CollabSegError,
    ConfigError,
    DimensionError,
    MetaImageFormatError,
    NumericError,
    PairingError,
    PrerequisiteError,
    UndefinedMetricError,
    UsageError,
)
from .fusion import fuse, fuse_dataset
from .metrics import assd, dice, evaluate_volume, iou, precision, ravd
from .pipeline import CollaborativeSegmenter, build_mixed_dataset, predict_volume, train_final, train_fs_lcs
from .registration import DeformationField, RegNet, SliceRegistration, propagate_labels, warp_bilinear, warp_label
from .segmentation import UNet, UNetSegmenter, seg_loss
from .semi import PseudoMask, SemiSupervisedLabeler, pseudo_label

__all__ = [
    "CentralAnnotation",
    "CollabSegError",
    "CollaborativeSegmenter",
    "ConfigError",
    "DeformationField",
    "DimensionError",
    "ExperimentConfig",
    "MetaImageFormatError",
    "NumericError",
    "PairingError",
    "PhantomSpec",
    "PrerequisiteError",
    "PseudoMask",
    "RegNet",
    "SemiSupervisedLabeler",
    "SliceRegistration",
    "UNet",
    "UNetSegmenter",
    "UndefinedMetricError",
    "UsageError",
    "Volume",
    "assd",
    "build_mixed_dataset",
    "dice",
    "evaluate_volume",
    "fuse",
    "fuse_dataset",
    "generate_phantom",
    "iou",
    "load_config",
    "precision",
    "predict_volume",
    "propagate_labels",
    "pseudo_label",
    "ravd",
    "read_metaimage",
    "seg_loss",
    "train_final",
    "train_fs_lcs",
    "warp_bilinear",
    "warp_label",
    "write_metaimage",
    "__version__",
]
