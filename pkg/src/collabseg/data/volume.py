from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DimensionError


MIN_INPLANE = 8


def central_index(depth):
    """Zero-based index of the annotated slice; the later middle for even depth."""
    return depth // 2


@dataclass
class Volume:
    """A 3D scalar image indexed ``voxels[slice, row, col]``.

    ``spacing`` is (mm per row, mm per col, mm per slice).
    """

    id: str
    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.voxels.ndim != 3:
            raise DimensionError(f"volume {self.id}: voxels must be 3-D, got {self.voxels.shape}")
        n, h, w = self.voxels.shape
        if n < 3 or h < 1 or w < 1:
            raise DimensionError(f"volume {self.id}: need at least 3 non-empty slices, got {self.voxels.shape}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"volume {self.id}: spacing must be three positive numbers")
        if not np.all(np.isfinite(self.voxels)):
            raise ValueError(f"volume {self.id}: non-finite voxel values")

    @property
    def depth(self):
        return self.voxels.shape[0]

    @property
    def height(self):
        return self.voxels.shape[1]

    @property
    def width(self):
        return self.voxels.shape[2]

    def check_trainable(self, min_size=MIN_INPLANE):
        """Networks need at least ``min_size`` pixels along each in-plane axis."""
        if self.height < min_size or self.width < min_size:
            raise DimensionError(f"volume {self.id}: in-plane size {self.height}x{self.width} below {min_size}")
        return self

    @property
    def central_index(self):
        return central_index(self.depth)

    def slice(self, n):
        return self.voxels[n]


@dataclass
class CentralAnnotation:
    """The one manually labeled slice of a training volume."""

    volume_id: str
    central_index: int
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(np.uint8)
        if self.mask.ndim != 2:
            raise DimensionError(f"annotation for {self.volume_id} must be 2-D")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError(f"annotation for {self.volume_id} is not binary")

    @classmethod
    def from_ground_truth(cls, volume, full_mask):
        """Keep only the central slice of a dense reference mask."""
        c = volume.central_index
        full_mask = np.asarray(full_mask)
        if full_mask.shape != volume.voxels.shape:
            raise DimensionError(f"mask {full_mask.shape} != volume {volume.voxels.shape}")
        return cls(volume.id, c, (full_mask[c] > 0).astype(np.uint8))

    def check_against(self, volume):
        if self.volume_id != volume.id:
            raise ValueError(f"annotation {self.volume_id} paired with volume {volume.id}")
        if self.central_index != volume.central_index:
            raise ValueError(
                f"annotation index {self.central_index} is not the central slice {volume.central_index}"
            )
        if self.mask.shape != (volume.height, volume.width):
            raise DimensionError(f"annotation shape {self.mask.shape} != slice shape")
