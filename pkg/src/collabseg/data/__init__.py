"""Volume loading, synthesis, preprocessing and fold splitting."""

from .folds import FoldSplit, split_folds
from .metaimage import read_metaimage, read_metaimage_array, write_metaimage, write_metaimage_array
from .phantom import (
    DatasetEntry,
    PhantomSpec,
    generate_phantom,
    load_dataset,
    load_promise12,
    write_dataset,
)
from .transforms import (
    apply_transform,
    augment,
    normalize_intensity,
    resample_inplane,
    resample_mask_inplane,
)
from .volume import CentralAnnotation, Volume, central_index

__all__ = [
    "CentralAnnotation",
    "DatasetEntry",
    "FoldSplit",
    "PhantomSpec",
    "Volume",
    "apply_transform",
    "augment",
    "central_index",
    "generate_phantom",
    "load_dataset",
    "load_promise12",
    "normalize_intensity",
    "read_metaimage",
    "read_metaimage_array",
    "resample_inplane",
    "resample_mask_inplane",
    "split_folds",
    "write_dataset",
    "write_metaimage",
    "write_metaimage_array",
]
